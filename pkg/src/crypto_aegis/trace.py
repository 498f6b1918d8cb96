"""Captured-traffic representation: packets, directional traces, ingestion.

Two input formats are understood. The canonical CSV (``t_rel_s,size_bytes,direction``)
is the interchange format used everywhere else in the package; classic libpcap
files are converted into it by :func:`parse_pcap`.
"""

from __future__ import annotations

import csv
import enum
import io
import ipaddress
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

CSV_HEADER = ("t_rel_s", "size_bytes", "direction")
MAX_PACKET_SIZE = 65535

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_QINQ = 0x88A8


class TraceFormatError(ValueError):
    """Raised when a trace file cannot be parsed."""


class PcapError(TraceFormatError):
    pass


class InsufficientPacketsError(ValueError):
    def __init__(self, need: int, have: int):
        super().__init__(f"need {need}, have {have}")
        self.need = need
        self.have = have


class Direction(enum.Enum):
    INGOING = "in"
    OUTGOING = "out"


class ClientKind(enum.Enum):
    FULL_NODE = "FullNode"
    MINER = "Miner"
    STANDARD = "Standard"


@dataclass(frozen=True, slots=True)
class PacketRecord:
    t_rel: float
    size: int
    direction: Direction

    def __post_init__(self):
        if not self.t_rel >= 0:
            raise ValueError(f"t_rel must be >= 0, got {self.t_rel}")
        if not 0 <= self.size <= MAX_PACKET_SIZE:
            raise ValueError(f"size must be in [0, {MAX_PACKET_SIZE}], got {self.size}")


@dataclass(frozen=True)
class TraceLabel:
    application: str
    client_kind: ClientKind = ClientKind.STANDARD
    tunnel: str | None = None  # VPN name, None when not tunnelled

    def __post_init__(self):
        if not self.application:
            raise ValueError("application must be non-empty")


@dataclass(frozen=True)
class DirectionalTrace:
    direction: Direction
    packets: tuple[PacketRecord, ...]
    label: TraceLabel

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(self.packets))
        prev = 0.0
        for i, p in enumerate(self.packets):
            if p.direction is not self.direction:
                raise ValueError(f"packet {i} has direction {p.direction.value}, "
                                 f"trace is {self.direction.value}")
            if p.t_rel < prev:
                raise ValueError(f"packet {i}: timestamps must be non-decreasing")
            prev = p.t_rel

    def __len__(self) -> int:
        return len(self.packets)

    def times(self) -> np.ndarray:
        return np.fromiter((p.t_rel for p in self.packets), dtype=float, count=len(self.packets))

    def sizes(self) -> np.ndarray:
        return np.fromiter((p.size for p in self.packets), dtype=float, count=len(self.packets))


@dataclass(frozen=True)
class TraceSummary:
    duration: float
    n_packets: int
    q05_dt: float
    q50_dt: float
    q95_dt: float
    min_dt: float
    max_dt: float
    q05_sz: float
    q50_sz: float
    q95_sz: float
    min_sz: float
    max_sz: float


@dataclass
class PcapStats:
    """Diagnostics collected while reading a pcap file."""
    frames: int = 0
    skipped: int = 0
    local_to_local: int = 0
    reordered: int = 0
    skipped_reasons: dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str) -> None:
        self.skipped += 1
        self.skipped_reasons[reason] = self.skipped_reasons.get(reason, 0) + 1


# --------------------------------------------------------------------------
# Canonical CSV
# --------------------------------------------------------------------------

def parse_canonical_csv(text: str | io.TextIOBase) -> list[PacketRecord]:
    """Parse a canonical CSV trace.

    Rows are returned in file order. Timestamps must be non-decreasing; a
    decrease is an error rather than something silently re-sorted.
    """
    stream = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError("line 1: missing header") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise TraceFormatError(f"line 1: expected header {','.join(CSV_HEADER)!r}")

    records = []
    prev = 0.0
    for row in reader:
        lineno = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise TraceFormatError(f"line {lineno}: expected 3 fields, got {len(row)}")
        t_s, size_s, dir_s = (c.strip() for c in row)
        try:
            t = float(t_s)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: invalid timestamp") from None
        if not np.isfinite(t) or t < 0:
            raise TraceFormatError(f"line {lineno}: invalid timestamp")
        try:
            size = int(size_s)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: invalid size") from None
        if not 0 <= size <= MAX_PACKET_SIZE:
            raise TraceFormatError(f"line {lineno}: invalid size")
        try:
            direction = Direction(dir_s)
        except ValueError:
            raise TraceFormatError(f"line {lineno}: invalid direction {dir_s!r}") from None
        if t < prev:
            raise TraceFormatError(f"line {lineno}: timestamp {t_s} is before previous row")
        prev = t
        records.append(PacketRecord(t, size, direction))
    return records


def format_canonical_csv(packets: Iterable[PacketRecord]) -> str:
    # nine fractional digits keeps synthetic sub-microsecond gaps intact
    lines = [",".join(CSV_HEADER)]
    for p in packets:
        lines.append(f"{p.t_rel:.9f},{p.size},{p.direction.value}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Classic pcap
# --------------------------------------------------------------------------

def parse_pcap(data: bytes, local_subnet) -> tuple[list[PacketRecord], PcapStats]:
    """Read a classic (microsecond) pcap with Ethernet link type.

    Direction is Outgoing iff the IP source address is inside ``local_subnet``.
    Frames that are neither IPv4 nor IPv6 (after unwrapping at most one VLAN
    tag) are skipped and counted in the returned stats. Packet size is the
    original on-wire length.
    """
    subnet = ipaddress.ip_network(local_subnet, strict=False)
    if len(data) < 24:
        raise PcapError("not a pcap file (shorter than the 24-byte global header)")
    (magic_le,) = struct.unpack_from("<I", data, 0)
    if magic_le == PCAP_MAGIC:
        endian = "<"
    elif magic_le == _swap32(PCAP_MAGIC):
        endian = ">"
    elif magic_le in (PCAP_MAGIC_NS, _swap32(PCAP_MAGIC_NS)):
        raise PcapError("nanosecond-resolution pcap is not supported")
    else:
        raise PcapError(f"not a pcap file (bad magic 0x{magic_le:08x})")

    _, _, _, _, _, _, linktype = struct.unpack_from(endian + "IHHiIII", data, 0)
    if linktype != LINKTYPE_ETHERNET:
        raise PcapError(f"unsupported link type {linktype} (only Ethernet)")

    stats = PcapStats()
    raw = []  # (microseconds, orig_len, direction)
    offset = 24
    rec_hdr = struct.Struct(endian + "IIII")
    while offset < len(data):
        if offset + 16 > len(data):
            raise PcapError(f"truncated record header at byte offset {offset}")
        ts_sec, ts_usec, incl_len, orig_len = rec_hdr.unpack_from(data, offset)
        body_start = offset + 16
        if body_start + incl_len > len(data):
            raise PcapError(f"truncated record at byte offset {offset}: "
                            f"need {incl_len} bytes, have {len(data) - body_start}")
        frame = data[body_start:body_start + incl_len]
        offset = body_start + incl_len
        stats.frames += 1

        addrs = _ip_addresses(frame, stats)
        if addrs is None:
            continue
        if orig_len > MAX_PACKET_SIZE:
            stats.skip("oversize")
            continue
        src, dst = addrs
        src_local = src in subnet if src.version == subnet.version else False
        if src_local:
            direction = Direction.OUTGOING
            if dst.version == subnet.version and dst in subnet:
                stats.local_to_local += 1
        else:
            direction = Direction.INGOING
        raw.append((ts_sec * 1_000_000 + ts_usec, orig_len, direction))

    if not raw:
        return [], stats
    stamps = [r[0] for r in raw]
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        stats.reordered = sum(1 for a, b in zip(stamps, stamps[1:]) if b < a)
        raw.sort(key=lambda r: r[0])
    base = raw[0][0]
    records = [PacketRecord((us - base) / 1e6, size, d) for us, size, d in raw]
    return records, stats


def _swap32(x: int) -> int:
    return int.from_bytes(x.to_bytes(4, "little"), "big")


def _ip_addresses(frame: bytes, stats: PcapStats):
    if len(frame) < 14:
        stats.skip("short-frame")
        return None
    ethertype = int.from_bytes(frame[12:14], "big")
    l3 = 14
    if ethertype in (ETHERTYPE_VLAN, ETHERTYPE_QINQ):
        if len(frame) < 18:
            stats.skip("short-frame")
            return None
        ethertype = int.from_bytes(frame[16:18], "big")
        l3 = 18
        if ethertype in (ETHERTYPE_VLAN, ETHERTYPE_QINQ):
            stats.skip("stacked-vlan")
            return None
    if ethertype == ETHERTYPE_IPV4:
        if len(frame) < l3 + 20:
            stats.skip("short-ip-header")
            return None
        return (ipaddress.IPv4Address(frame[l3 + 12:l3 + 16]),
                ipaddress.IPv4Address(frame[l3 + 16:l3 + 20]))
    if ethertype == ETHERTYPE_IPV6:
        if len(frame) < l3 + 40:
            stats.skip("short-ip-header")
            return None
        return (ipaddress.IPv6Address(frame[l3 + 8:l3 + 24]),
                ipaddress.IPv6Address(frame[l3 + 24:l3 + 40]))
    stats.skip("non-ip")
    return None


# --------------------------------------------------------------------------
# Trace operations
# --------------------------------------------------------------------------

def split_directions(packets: Sequence[PacketRecord],
                     label: TraceLabel) -> tuple[DirectionalTrace, DirectionalTrace]:
    """Partition packets into (ingoing, outgoing) traces, keeping order."""
    ingoing = [p for p in packets if p.direction is Direction.INGOING]
    outgoing = [p for p in packets if p.direction is Direction.OUTGOING]
    return (DirectionalTrace(Direction.INGOING, tuple(ingoing), label),
            DirectionalTrace(Direction.OUTGOING, tuple(outgoing), label))


def truncate(trace: DirectionalTrace, n: int) -> DirectionalTrace:
    """Keep the first ``n`` packets, rebased so the first one is at t = 0.

    Never pads: a trace shorter than ``n`` is an error.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if len(trace) < n:
        raise InsufficientPacketsError(n, len(trace))
    kept = trace.packets[:n]
    t0 = kept[0].t_rel
    return replace(trace, packets=tuple(PacketRecord(p.t_rel - t0, p.size, p.direction)
                                        for p in kept))


def quantile(values, q):
    # linear interpolation at 0-indexed rank (n - 1) * q
    return np.quantile(np.asarray(values, dtype=float), q, method="linear")


def summarize(trace: DirectionalTrace) -> TraceSummary:
    if len(trace) < 2:
        raise InsufficientPacketsError(2, len(trace))
    t = trace.times()
    dt = np.diff(t)
    sz = trace.sizes()
    qdt = quantile(dt, [0.05, 0.5, 0.95])
    qsz = quantile(sz, [0.05, 0.5, 0.95])
    return TraceSummary(
        duration=float(t[-1] - t[0]),
        n_packets=len(trace),
        q05_dt=float(qdt[0]), q50_dt=float(qdt[1]), q95_dt=float(qdt[2]),
        min_dt=float(dt.min()), max_dt=float(dt.max()),
        q05_sz=float(qsz[0]), q50_sz=float(qsz[1]), q95_sz=float(qsz[2]),
        min_sz=float(sz.min()), max_sz=float(sz.max()),
    )


def trace_from_arrays(times, sizes, direction: Direction, label: TraceLabel) -> DirectionalTrace:
    packets = tuple(PacketRecord(float(t), int(s), direction) for t, s in zip(times, sizes))
    return DirectionalTrace(direction, packets, label)
