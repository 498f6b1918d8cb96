"""Regenerate the pcap fixtures: ``python tests/fixtures/make_fixtures.py``.

three_frames.pcap           little-endian header, 3 IPv4/TCP frames
three_frames_swapped.pcap   same records, big-endian header
arp.pcap                    a single ARP frame
vlan.pcap                   one VLAN-tagged IPv4 frame, one double-tagged frame
"""

import struct
from pathlib import Path

HERE = Path(__file__).parent

LOCAL = bytes([192, 168, 1, 10])
REMOTE = bytes([93, 184, 216, 34])

# (ts_sec, ts_usec, src, dst, orig_len)
FRAMES = [
    (1700000000, 0, LOCAL, REMOTE, 66),
    (1700000000, 250000, REMOTE, LOCAL, 1434),
    (1700000001, 123, LOCAL, REMOTE, 74),
]


def ethernet(ethertype, payload, vlan_tags=0):
    head = b"\x00\x11\x22\x33\x44\x55" + b"\x66\x77\x88\x99\xaa\xbb"
    for _ in range(vlan_tags):
        head += struct.pack("!HH", 0x8100, 42)
    return head + struct.pack("!H", ethertype) + payload


def ipv4_tcp(src, dst):
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 40, 1, 0, 64, 6, 0, src, dst)
    tcp = struct.pack("!HHIIBBHHH", 51000, 443, 1, 1, 0x50, 0x10, 512, 0, 0)
    return ip + tcp


def arp():
    return struct.pack("!HHBBH6s4s6s4s", 1, 0x0800, 6, 4, 1, b"\x66" * 6, LOCAL,
                       b"\x00" * 6, REMOTE)


def pcap(records, endian):
    out = struct.pack(endian + "IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
    for ts_sec, ts_usec, frame, orig_len in records:
        out += struct.pack(endian + "IIII", ts_sec, ts_usec, len(frame), orig_len) + frame
    return out


def main():
    recs = [(s, us, ethernet(0x0800, ipv4_tcp(src, dst)), n) for s, us, src, dst, n in FRAMES]
    (HERE / "three_frames.pcap").write_bytes(pcap(recs, "<"))
    (HERE / "three_frames_swapped.pcap").write_bytes(pcap(recs, ">"))
    (HERE / "arp.pcap").write_bytes(pcap([(1700000000, 0, ethernet(0x0806, arp()), 42)], "<"))
    vlan = [
        (1700000000, 0, ethernet(0x0800, ipv4_tcp(LOCAL, REMOTE), vlan_tags=1), 70),
        (1700000000, 10, ethernet(0x0800, ipv4_tcp(LOCAL, REMOTE), vlan_tags=2), 74),
    ]
    (HERE / "vlan.pcap").write_bytes(pcap(vlan, "<"))


if __name__ == "__main__":
    main()
