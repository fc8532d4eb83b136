"""Capture file writer.

The simulation has no link layer, so each captured packet is wrapped in a
synthesized Ethernet II + IPv4 + TCP/UDP/ICMP encapsulation with real
checksums and per-flow TCP sequence bookkeeping, making the files
dissectable by standard analyzers. Classic pcap container: magic
0xA1B2C3D4, version 2.4, snaplen 65535, linktype 1.
"""
from __future__ import annotations

import ipaddress
import struct

from .netsim import Packet

SNAPLEN = 65535
GLOBAL_HEADER = struct.pack("<LHHlLLL", 0xA1B2C3D4, 2, 4, 0, 0, SNAPLEN, 1)

_FLAG_BITS = {"fin": 0x01, "syn": 0x02, "rst": 0x04, "psh": 0x08,
              "ack": 0x10, "urg": 0x20}

_KIND_FLAGS = {
    "syn": ("syn",),
    "synack": ("syn", "ack"),
    "ack": ("ack",),
    "rst": ("rst", "ack"),
    "fin": ("fin", "ack"),
    "data": ("psh", "ack"),
}


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(int.from_bytes(data[i:i + 2], "big") for i in range(0, len(data), 2))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _mac_for(ip: str) -> bytes:
    tail = ipaddress.ip_address(ip).packed[1:]
    return b"\x02\x54" + b"\x00" + tail


def _encode_tcp_options(options: tuple) -> bytes:
    out = bytearray()
    for item in options:
        name = item[0] if isinstance(item, tuple) else item
        value = item[1] if isinstance(item, tuple) and len(item) > 1 else None
        if name == "MSS":
            out += struct.pack(">BBH", 2, 4, value)
        elif name == "NOP":
            out += b"\x01"
        elif name == "WS":
            out += struct.pack(">BBB", 3, 3, value)
        elif name == "SACK":
            out += b"\x04\x02"
        elif name == "TS":
            a, b = value if value else (0, 0)
            out += struct.pack(">BBLL", 8, 10, a, b)
    while len(out) % 4:
        out += b"\x01"
    return bytes(out)


class _FlowState:
    __slots__ = ("seq", "peer_seq")

    def __init__(self, isn: int) -> None:
        self.seq = isn
        self.peer_seq = 0


class PcapSynthesizer:
    """Stateful frame builder: one instance per capture file."""

    def __init__(self) -> None:
        self._flows: dict[tuple, _FlowState] = {}
        self._isn = 0x1000
        self._ip_id = 1
        self._icmp_id = 0x0100

    def _flow(self, src: str, sport: int, dst: str, dport: int) -> _FlowState:
        key = (src, sport, dst, dport)
        state = self._flows.get(key)
        if state is None:
            state = _FlowState(self._isn)
            self._isn = (self._isn + 0x10000) & 0xFFFFFFFF
            self._flows[key] = state
        return state

    def _tcp_segment(self, pkt: Packet) -> bytes:
        fwd = self._flow(pkt.src, pkt.sport, pkt.dst, pkt.dport)
        rev = self._flow(pkt.dst, pkt.dport, pkt.src, pkt.sport)
        flags = _KIND_FLAGS.get(pkt.kind, ("psh", "ack"))
        seq = fwd.seq
        ack = rev.seq if "ack" in flags else 0
        advance = len(pkt.payload) + (1 if pkt.kind in ("syn", "synack", "fin") else 0)
        fwd.seq = (fwd.seq + advance) & 0xFFFFFFFF
        options = _encode_tcp_options(pkt.tcp_options) if pkt.kind == "synack" else b""
        offset_words = 5 + len(options) // 4
        flag_bits = 0
        for name in flags:
            flag_bits |= _FLAG_BITS[name]
        window = pkt.tcp_window if pkt.tcp_window is not None else 64240
        header = struct.pack(
            ">HHLLHHHH", pkt.sport, pkt.dport, seq, ack,
            (offset_words << 12) | flag_bits, window, 0, 0)
        header = header[:20] + options
        pseudo = (ipaddress.ip_address(pkt.src).packed
                  + ipaddress.ip_address(pkt.dst).packed
                  + struct.pack(">BBH", 0, 6, len(header) + len(pkt.payload)))
        csum = _checksum(pseudo + header + pkt.payload)
        header = header[:16] + struct.pack(">H", csum) + header[18:]
        return header + pkt.payload

    def _udp_segment(self, pkt: Packet) -> bytes:
        length = 8 + len(pkt.payload)
        header = struct.pack(">HHHH", pkt.sport, pkt.dport, length, 0)
        pseudo = (ipaddress.ip_address(pkt.src).packed
                  + ipaddress.ip_address(pkt.dst).packed
                  + struct.pack(">BBH", 0, 17, length))
        csum = _checksum(pseudo + header + pkt.payload)
        if csum == 0:
            csum = 0xFFFF
        return struct.pack(">HHHH", pkt.sport, pkt.dport, length, csum) + pkt.payload

    def _icmp_segment(self, pkt: Packet) -> bytes:
        kind = 8 if pkt.kind == "echo" else 0
        if pkt.kind == "echo":
            self._icmp_id += 1
        body = struct.pack(">BBHHH", kind, 0, 0, self._icmp_id & 0xFFFF, 1)
        body += pkt.payload or bytes(range(0x10, 0x30))
        csum = _checksum(body)
        return body[:2] + struct.pack(">H", csum) + body[4:]

    def frame(self, pkt: Packet) -> bytes:
        if pkt.proto == "tcp":
            segment, proto_num = self._tcp_segment(pkt), 6
        elif pkt.proto == "udp":
            segment, proto_num = self._udp_segment(pkt), 17
        else:
            segment, proto_num = self._icmp_segment(pkt), 1
        total_len = 20 + len(segment)
        df = pkt.ip_df if pkt.ip_df is not None else True
        frag = 0x4000 if df else 0
        ttl = pkt.ip_ttl if pkt.ip_ttl is not None else 64
        ip_header = struct.pack(
            ">BBHHHBBH", 0x45, 0, total_len, self._ip_id, frag, ttl, proto_num, 0)
        ip_header += ipaddress.ip_address(pkt.src).packed
        ip_header += ipaddress.ip_address(pkt.dst).packed
        self._ip_id = self._ip_id % 0xFFFF + 1
        csum = _checksum(ip_header)
        ip_header = ip_header[:10] + struct.pack(">H", csum) + ip_header[12:]
        ethernet = _mac_for(pkt.dst) + _mac_for(pkt.src) + struct.pack(">H", 0x0800)
        return ethernet + ip_header + segment


def record_bytes(pkt: Packet, frame: bytes) -> bytes:
    ts_sec = int(pkt.ts)
    ts_usec = round((pkt.ts - ts_sec) * 1_000_000)
    if ts_usec == 1_000_000:
        ts_sec, ts_usec = ts_sec + 1, 0
    return struct.pack("<LLLL", ts_sec, ts_usec, len(frame), len(frame)) + frame


def write_pcap(path, packets: list[Packet]) -> None:
    synth = PcapSynthesizer()
    with open(path, "wb") as handle:
        handle.write(GLOBAL_HEADER)
        for pkt in packets:
            handle.write(record_bytes(pkt, synth.frame(pkt)))


def pcap_bytes(packets: list[Packet]) -> bytes:
    synth = PcapSynthesizer()
    out = bytearray(GLOBAL_HEADER)
    for pkt in packets:
        out += record_bytes(pkt, synth.frame(pkt))
    return bytes(out)
