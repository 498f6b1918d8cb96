import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crypto_aegis.synth import ClassProfile, sample_trace
from crypto_aegis.trace import (
    Direction,
    DirectionalTrace,
    InsufficientPacketsError,
    PacketRecord,
    PcapError,
    TraceFormatError,
    TraceLabel,
    format_canonical_csv,
    parse_canonical_csv,
    parse_pcap,
    split_directions,
    summarize,
    trace_from_arrays,
    truncate,
)

from .oracles import naive_quantile

FIXTURES = Path(__file__).parent / "fixtures"
IN, OUT = Direction.INGOING, Direction.OUTGOING
LABEL = TraceLabel("Test")


def make_trace(times, sizes=None, direction=IN):
    sizes = sizes if sizes is not None else [100] * len(times)
    return trace_from_arrays(times, sizes, direction, LABEL)


# -- canonical CSV ----------------------------------------------------------

def test_csv_two_records():
    recs = parse_canonical_csv("t_rel_s,size_bytes,direction\n0.0,66,out\n0.5,1434,in")
    assert len(recs) == 2
    assert recs[1] == PacketRecord(0.5, 1434, IN)
    assert recs[0].direction is OUT


def test_csv_header_only():
    assert parse_canonical_csv("t_rel_s,size_bytes,direction\n") == []


def test_csv_bad_size_names_line():
    with pytest.raises(TraceFormatError, match="line 3: invalid size"):
        parse_canonical_csv("t_rel_s,size_bytes,direction\n0.0,66,out\n0.5,abc,in\n")


@pytest.mark.parametrize("body, msg", [
    ("1.0,66,out\n0.5,66,out\n", "line 3"),
    ("0.0,66,sideways\n", "line 2: invalid direction"),
    ("-1.0,66,in\n", "line 2: invalid timestamp"),
    ("0.0,70000,in\n", "line 2: invalid size"),
    ("0.0,66\n", "line 2: expected 3 fields"),
])
def test_csv_rejects(body, msg):
    with pytest.raises(TraceFormatError, match=msg):
        parse_canonical_csv("t_rel_s,size_bytes,direction\n" + body)


def test_csv_bad_header():
    with pytest.raises(TraceFormatError, match="line 1"):
        parse_canonical_csv("time,size,dir\n0,1,in\n")


packet_lists = st.lists(
    st.tuples(st.floats(0, 1e4, allow_nan=False), st.integers(0, 65535), st.sampled_from(Direction)),
    max_size=40,
).map(lambda xs: [PacketRecord(t, s, d) for t, s, d in sorted(xs, key=lambda x: x[0])])


@given(packet_lists)
def test_csv_round_trip(packets):
    back = parse_canonical_csv(format_canonical_csv(packets))
    assert len(back) == len(packets)
    for a, b in zip(packets, back):
        assert round(a.t_rel * 1e6) == round(b.t_rel * 1e6)
        assert (a.size, a.direction) == (b.size, b.direction)


# -- pcap -------------------------------------------------------------------

def test_pcap_fixture_records():
    recs, stats = parse_pcap((FIXTURES / "three_frames.pcap").read_bytes(), "192.168.1.0/24")
    assert [(r.t_rel, r.size, r.direction) for r in recs] == [
        (0.0, 66, OUT), (0.25, 1434, IN), (1.000123, 74, OUT)]
    assert stats.skipped == 0


def test_pcap_swapped_twin_identical():
    a, _ = parse_pcap((FIXTURES / "three_frames.pcap").read_bytes(), "192.168.1.0/24")
    b, _ = parse_pcap((FIXTURES / "three_frames_swapped.pcap").read_bytes(), "192.168.1.0/24")
    assert a == b
    assert (FIXTURES / "three_frames.pcap").read_bytes()[:4] == b"\xd4\xc3\xb2\xa1"
    assert (FIXTURES / "three_frames_swapped.pcap").read_bytes()[:4] == b"\xa1\xb2\xc3\xd4"


def test_pcap_arp_skipped():
    recs, stats = parse_pcap((FIXTURES / "arp.pcap").read_bytes(), "192.168.1.0/24")
    assert recs == []
    assert stats.skipped == 1


def test_pcap_vlan_unwrapped_one_level():
    recs, stats = parse_pcap((FIXTURES / "vlan.pcap").read_bytes(), "192.168.1.0/24")
    assert [(r.size, r.direction) for r in recs] == [(70, OUT)]
    assert stats.skipped_reasons == {"stacked-vlan": 1}


def test_pcap_other_subnet_flips_directions():
    recs, _ = parse_pcap((FIXTURES / "three_frames.pcap").read_bytes(), "93.184.216.0/24")
    assert [r.direction for r in recs] == [IN, OUT, IN]


def test_pcap_bad_magic():
    with pytest.raises(PcapError, match="not a pcap file"):
        parse_pcap(b"\x00" * 40, "10.0.0.0/8")


def test_pcap_nanosecond_rejected():
    data = struct.pack("<IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, 65535, 1)
    with pytest.raises(PcapError, match="nanosecond"):
        parse_pcap(data, "10.0.0.0/8")


def test_pcap_truncated_record_reports_offset():
    data = (FIXTURES / "three_frames.pcap").read_bytes()[:-10]
    with pytest.raises(PcapError, match="offset"):
        parse_pcap(data, "192.168.1.0/24")


def test_pcap_local_to_local_counted():
    hdr = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20, 0, 0, 64, 6, 0,
                     bytes([10, 0, 0, 1]), bytes([10, 0, 0, 2]))
    frame = b"\x00" * 12 + b"\x08\x00" + ip
    data = hdr + struct.pack("<IIII", 5, 0, len(frame), len(frame)) + frame
    recs, stats = parse_pcap(data, "10.0.0.0/24")
    assert recs[0].direction is OUT
    assert stats.local_to_local == 1


# -- split / truncate / summarize -------------------------------------------

def test_split_partition():
    pk = [PacketRecord(0, 1, IN), PacketRecord(1, 1, OUT), PacketRecord(2, 1, IN)]
    ingoing, outgoing = split_directions(pk, LABEL)
    assert (len(ingoing), len(outgoing)) == (2, 1)


def test_split_all_outgoing_and_empty():
    pk = [PacketRecord(0, 1, OUT), PacketRecord(1, 1, OUT)]
    ingoing, outgoing = split_directions(pk, LABEL)
    assert len(ingoing) == 0 and len(outgoing) == 2
    a, b = split_directions([], LABEL)
    assert len(a) == len(b) == 0


@given(packet_lists)
def test_split_is_partition(packets):
    ingoing, outgoing = split_directions(packets, LABEL)
    merged = sorted(ingoing.packets + outgoing.packets,
                    key=lambda p: (p.t_rel, packets.index(p)))
    assert len(merged) == len(packets)
    assert sorted(merged, key=lambda p: (p.t_rel, p.size, p.direction.value)) == \
        sorted(packets, key=lambda p: (p.t_rel, p.size, p.direction.value))


def test_truncate_4576():
    trace = make_trace(np.arange(5000) * 0.01 + 3.0)
    cut = truncate(trace, 4576)
    assert len(cut) == 4576
    assert cut.packets[0].t_rel == 0.0


def test_truncate_full_length_is_rebased_identity():
    trace = make_trace([2.0, 2.5, 4.0])
    cut = truncate(trace, 3)
    assert [p.t_rel for p in cut.packets] == [0.0, 0.5, 2.0]


def test_truncate_insufficient():
    with pytest.raises(InsufficientPacketsError, match="need 832, have 100"):
        truncate(make_trace(np.arange(100.0)), 832)


def test_summarize_hand_example():
    s = summarize(make_trace([0, 1, 3], [10, 20, 30]))
    assert s.duration == 3
    assert s.q50_dt == 1.5
    assert s.q50_sz == 20


def test_summarize_constant():
    s = summarize(make_trace(np.arange(20.0), [100] * 20))
    assert s.q05_dt == s.q50_dt == s.q95_dt == s.min_dt == s.max_dt == 1.0
    assert s.q05_sz == s.q50_sz == s.q95_sz == 100


def test_summarize_needs_two_packets():
    with pytest.raises(InsufficientPacketsError):
        summarize(make_trace([0.0]))


def test_summarize_synthetic_bitcoin_ingoing():
    prof = ClassProfile("Bitcoin Ingoing", IN, median_dt=0.000600, median_sz=90)
    s = summarize(sample_trace(prof, 4576, seed=11))
    assert abs(s.q50_dt - 0.000600) <= 0.2 * 0.000600
    assert abs(s.q50_sz - 90) <= 9


def test_summarize_matches_naive_quantile():
    gen = np.random.default_rng(5)
    t = np.cumsum(gen.exponential(1.0, 57))
    sz = gen.integers(54, 1514, 57)
    s = summarize(make_trace(t - t[0], sz))
    dt = list(np.diff(t))
    assert s.q05_dt == pytest.approx(naive_quantile(dt, 0.05), rel=1e-12)
    assert s.q95_sz == pytest.approx(naive_quantile(list(sz.astype(float)), 0.95), rel=1e-12)


def test_summary_quantiles_monotone_over_1000_random_traces():
    gen = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(gen.integers(2, 60))
        t = np.concatenate([[0.0], np.cumsum(gen.lognormal(-5, 2, n - 1))])
        s = summarize(make_trace(t, gen.integers(0, 65536, n)))
        assert s.min_dt <= s.q05_dt <= s.q50_dt <= s.q95_dt <= s.max_dt
        assert s.min_sz <= s.q05_sz <= s.q50_sz <= s.q95_sz <= s.max_sz
        assert s.duration == pytest.approx(t[-1])


def test_trace_rejects_mixed_direction():
    with pytest.raises(ValueError):
        DirectionalTrace(IN, (PacketRecord(0, 1, IN), PacketRecord(1, 1, OUT)), LABEL)


def test_packet_record_invariants():
    with pytest.raises(ValueError):
        PacketRecord(-0.1, 10, IN)
    with pytest.raises(ValueError):
        PacketRecord(0.0, 65536, IN)


@settings(max_examples=50)
@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=2, max_size=30))
def test_truncate_rebases_first_packet(ts):
    ts = sorted(ts)
    cut = truncate(make_trace(ts), len(ts) - 1 if len(ts) > 2 else 2)
    assert cut.packets[0].t_rel == 0.0
