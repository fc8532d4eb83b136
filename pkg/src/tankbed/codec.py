"""Modbus TCP / RTU-encapsulated frame codec.

Wire layout (TCP): 7-byte MBAP header + PDU.

    +----+----+----+----+----+----+----+----+----------+
    | txn_id  | proto_id| length  |unit| fn | payload  |
    +----+----+----+----+----+----+----+----+----------+
      0    1    2    3    4    5    6    7    8..

All header fields big-endian; length counts every byte after itself
(unit + PDU). proto_id is 0 for Modbus. PDU = function byte + payload,
at most 253 bytes. RTU-encapsulated framing (no MBAP) is unit + PDU +
CRC-16 appended low byte first.

Decoding is total: any byte string either yields a DecodedAdu (possibly
flagged as malformed) or raises FrameTooShort. Malformed frames are kept
parseable on purpose; the inspection and tolerance paths downstream need
the bytes, not an error.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

MAX_PDU = 253            # function byte + payload
MBAP_SIZE = 7
PROTOCOL_ID = 0

# Function codes the slave implements; anything else earns exception 0x01.
SUPPORTED_FUNCTIONS = frozenset({1, 2, 3, 4, 5, 6, 8, 15, 16, 17, 43})

FN_READ_COILS = 1
FN_READ_DISCRETE_INPUTS = 2
FN_READ_HOLDING_REGISTERS = 3
FN_READ_INPUT_REGISTERS = 4
FN_WRITE_SINGLE_COIL = 5
FN_WRITE_SINGLE_REGISTER = 6
FN_DIAGNOSTICS = 8
FN_WRITE_MULTIPLE_COILS = 15
FN_WRITE_MULTIPLE_REGISTERS = 16
FN_REPORT_SERVER_INFO = 17
FN_ENCAPSULATED_INTERFACE = 43

EXC_ILLEGAL_FUNCTION = 0x01
EXC_ILLEGAL_DATA_ADDRESS = 0x02
EXC_ILLEGAL_DATA_VALUE = 0x03
EXC_ACKNOWLEDGE = 0x05
EXC_SERVER_BUSY = 0x06

DIAG_RESTART_COMMS = 0x0001
DIAG_FORCE_LISTEN_ONLY = 0x0004
DIAG_CLEAR_COUNTERS = 0x000A


class CodecError(ValueError):
    pass


class FrameTooShort(CodecError):
    pass


class PayloadTooLong(CodecError):
    pass


@dataclass(frozen=True)
class ModbusAdu:
    transaction_id: int
    unit_id: int
    function: int
    payload: bytes = b""

    @property
    def pdu(self) -> bytes:
        return bytes([self.function]) + self.payload

    @property
    def is_exception(self) -> bool:
        return self.function >= 0x80

    @property
    def exception_code(self) -> int | None:
        if self.is_exception and self.payload:
            return self.payload[0]
        return None


@dataclass(frozen=True)
class DecodedAdu:
    adu: ModbusAdu
    protocol_id: int
    declared_length: int
    actual_length: int  # bytes actually present after the length field

    @property
    def length_mismatch(self) -> bool:
        return self.declared_length != self.actual_length

    @property
    def protocol_nonzero(self) -> bool:
        return self.protocol_id != 0

    @property
    def invalid_function(self) -> bool:
        return (self.adu.function & 0x7F) not in SUPPORTED_FUNCTIONS


def encode_adu(adu: ModbusAdu) -> bytes:
    """Serialize with the length field recomputed from the payload."""
    if len(adu.payload) + 1 > MAX_PDU:
        raise PayloadTooLong(f"PDU of {len(adu.payload) + 1} bytes exceeds {MAX_PDU}")
    if not 0 <= adu.transaction_id <= 0xFFFF:
        raise CodecError(f"transaction id out of range: {adu.transaction_id}")
    if not 0 <= adu.unit_id <= 0xFF:
        raise CodecError(f"unit id out of range: {adu.unit_id}")
    if not 0 <= adu.function <= 0xFF:
        raise CodecError(f"function code out of range: {adu.function}")
    length = 2 + len(adu.payload)  # unit id + function + payload
    header = struct.pack(">HHHB", adu.transaction_id, PROTOCOL_ID, length, adu.unit_id)
    return header + bytes([adu.function]) + adu.payload


def decode_adu(data: bytes) -> DecodedAdu:
    """Parse one ADU from a byte string, tolerating wrong length fields.

    The PDU is taken from the bytes actually present; declared_length keeps
    what the header claimed so callers can flag the mismatch.
    """
    if len(data) < MBAP_SIZE + 1:
        raise FrameTooShort(f"need at least {MBAP_SIZE + 1} bytes, got {len(data)}")
    transaction_id, protocol_id, declared = struct.unpack(">HHH", data[:6])
    unit_id = data[6]
    function = data[7]
    payload = bytes(data[8:])
    adu = ModbusAdu(transaction_id, unit_id, function, payload)
    return DecodedAdu(adu, protocol_id, declared, len(data) - 6)


def make_exception(function: int, code: int) -> bytes:
    """Exception PDU for a request function (high bit set, 1-byte code)."""
    return bytes([(function | 0x80) & 0xFF, code])


# --- request/response payload builders used by the master and attack kit ---

def build_read(address: int, quantity: int) -> bytes:
    return struct.pack(">HH", address, quantity)


def build_write_single(address: int, value: int) -> bytes:
    return struct.pack(">HH", address, value & 0xFFFF)


def build_write_registers(address: int, values: list[int]) -> bytes:
    body = b"".join(struct.pack(">H", v & 0xFFFF) for v in values)
    return struct.pack(">HHB", address, len(values), len(body)) + body


def build_write_coils(address: int, bits: list[bool]) -> bytes:
    count = (len(bits) + 7) // 8
    packed = bytearray(count)
    for i, bit in enumerate(bits):
        if bit:
            packed[i // 8] |= 1 << (i % 8)
    return struct.pack(">HHB", address, len(bits), count) + bytes(packed)


def parse_register_response(payload: bytes) -> list[int]:
    """Values from a read-registers response payload (byte count + data)."""
    if not payload or payload[0] != len(payload) - 1 or payload[0] % 2:
        raise CodecError("malformed register response payload")
    return [v for (v,) in struct.iter_unpack(">H", payload[1:])]


def parse_bit_response(payload: bytes, quantity: int) -> list[bool]:
    if not payload or payload[0] != len(payload) - 1:
        raise CodecError("malformed bit response payload")
    bits = []
    for i in range(quantity):
        bits.append(bool(payload[1 + i // 8] >> (i % 8) & 1))
    return bits


# --- CRC-16 (reflected 0xA001, init 0xFFFF, no final xor) ---

def _build_crc_table() -> tuple[int, ...]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0xA001 if crc & 1 else crc >> 1
        table.append(crc)
    return tuple(table)


_CRC_TABLE = _build_crc_table()


def crc16_modbus(data: bytes) -> int:
    crc = 0xFFFF
    for byte in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ byte) & 0xFF]
    return crc


@dataclass(frozen=True)
class RtuFrame:
    unit_id: int
    function: int
    payload: bytes
    crc_ok: bool

    @property
    def pdu(self) -> bytes:
        return bytes([self.function]) + self.payload


def encode_rtu(unit_id: int, pdu: bytes) -> bytes:
    """unit + PDU + CRC16, CRC transmitted low byte first."""
    if not pdu or len(pdu) > MAX_PDU:
        raise CodecError(f"bad PDU size {len(pdu)}")
    body = bytes([unit_id]) + pdu
    crc = crc16_modbus(body)
    return body + struct.pack("<H", crc)


def decode_rtu(frame: bytes) -> RtuFrame:
    if len(frame) < 4:  # unit + function + 2 CRC bytes
        raise FrameTooShort(f"RTU frame of {len(frame)} bytes")
    body, crc_bytes = frame[:-2], frame[-2:]
    (received,) = struct.unpack("<H", crc_bytes)
    return RtuFrame(
        unit_id=body[0],
        function=body[1],
        payload=bytes(body[2:]),
        crc_ok=crc16_modbus(body) == received,
    )


def looks_like_mbap(data: bytes) -> bool:
    """Transport auto-detection: zero protocol id marks a plausible MBAP."""
    return len(data) >= MBAP_SIZE + 1 and data[2:4] == b"\x00\x00"


def detect_framing(data: bytes) -> str:
    """Classify raw port-502 bytes as "mbap" or "rtu".

    Order of evidence: an exact MBAP (zero protocol id, declared length
    matching the byte count) wins; otherwise a frame whose trailing CRC
    verifies is serial-style; otherwise zero protocol-id bytes still mean
    a (length-mangled) MBAP, and everything else is a broken serial frame.
    """
    if looks_like_mbap(data):
        declared = int.from_bytes(data[4:6], "big")
        if 6 + declared == len(data):
            return "mbap"
        if crc16_modbus(data) == 0:
            return "rtu"
        return "mbap"
    return "rtu"
