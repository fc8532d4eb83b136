"""Modbus TCP slave.

The request logic is transport-free (`SlaveLogic.handle_frame` takes raw
bytes plus an arrival time and returns the response bytes plus a finish
time), so the same code serves the in-process fabric and a real TCP
socket. Frames are accepted in two encodings, told apart by the protocol
identifier bytes: standard MBAP, and serial-style frames (unit + PDU +
CRC16) tunnelled through the TCP stream.

Behavioral model:

* one request is serviced at a time; each costs `service_time` seconds,
  queued FIFO behind earlier arrivals
* when the backlog reaches `busy_threshold` outstanding requests, new
  requests are answered immediately with a server-busy exception
* a force-listen-only diagnostic silences all responses until a restart
  communications diagnostic arrives; requests are still executed
* serial-style frames with a bad checksum are dropped without a response
  (but still cost service time, as the frame had to be read and checked)
* only the configured unit id is served; unit 0 executes writes as a
  broadcast with no response, other unit ids are ignored
"""
from __future__ import annotations

import socket
import socketserver
import struct
import threading

from . import codec
from .netsim import Connection, Service
from .table import DataTable, OutOfBounds, Space

SERVICE_TIME = 0.0005
BUSY_THRESHOLD = 64
BUSY_REPLY_COST = 0.00005

MAX_BITS_PER_READ = 2000
MAX_WORDS_PER_READ = 125
MAX_BITS_PER_WRITE = 1968
MAX_WORDS_PER_WRITE = 123

DEVICE_ID_OBJECTS = ("OpenTankWorks", "TB-SLV-200", "1.0")
SERVER_ID_TEXT = b"Tank transfer slave"

_READ_SPACES = {
    codec.FN_READ_COILS: Space.COIL,
    codec.FN_READ_DISCRETE_INPUTS: Space.DISCRETE_INPUT,
    codec.FN_READ_HOLDING_REGISTERS: Space.HOLDING_REGISTER,
    codec.FN_READ_INPUT_REGISTERS: Space.INPUT_REGISTER,
}


class SlaveLogic:
    def __init__(self, table: DataTable, unit_id: int = 1,
                 service_time: float = SERVICE_TIME,
                 busy_threshold: int = BUSY_THRESHOLD) -> None:
        self.table = table
        self.unit_id = unit_id
        self.service_time = service_time
        self.busy_threshold = busy_threshold
        self.listen_only = False
        self.message_count = 0
        self.crc_error_count = 0
        self.exception_count = 0
        self._backlog: list[float] = []

    # --- service queue ---

    def _drain(self, t: float) -> None:
        self._backlog = [f for f in self._backlog if f > t]

    def backlog_depth(self, t: float) -> int:
        self._drain(t)
        return len(self._backlog)

    def _enqueue(self, t: float) -> float:
        start = max(t, self._backlog[-1] if self._backlog else t)
        finish = start + self.service_time
        self._backlog.append(finish)
        return finish

    # --- frame entry point ---

    def handle_frame(self, data: bytes, t: float) -> tuple[bytes | None, float]:
        """Returns (response bytes or None, service finish time)."""
        self._drain(t)
        if len(data) < 4:
            return None, t
        if codec.detect_framing(data) == "mbap":
            return self._handle_mbap(data, t)
        return self._handle_rtu(data, t)

    def _handle_mbap(self, data: bytes, t: float) -> tuple[bytes | None, float]:
        try:
            decoded = codec.decode_adu(data)
        except codec.CodecError:
            return None, t
        adu = decoded.adu
        if adu.unit_id == 0:
            finish = self._enqueue(t)
            self.message_count += 1
            self._respond_pdu(adu.function, adu.payload,
                              decoded.length_mismatch, broadcast=True)
            return None, finish
        if adu.unit_id != self.unit_id:
            return None, t
        if len(self._backlog) >= self.busy_threshold:
            return self._busy_response(adu, t)
        finish = self._enqueue(t)
        self.message_count += 1
        pdu = self._respond_pdu(adu.function, adu.payload, decoded.length_mismatch)
        if pdu is None:
            return None, finish
        out = codec.ModbusAdu(adu.transaction_id, adu.unit_id, pdu[0], pdu[1:])
        return codec.encode_adu(out), finish

    def _handle_rtu(self, data: bytes, t: float) -> tuple[bytes | None, float]:
        try:
            frame = codec.decode_rtu(data)
        except codec.CodecError:
            return None, t
        if not frame.crc_ok:
            self.crc_error_count += 1
            if len(self._backlog) >= self.busy_threshold:
                return None, t  # intake saturated; excess frames cost nothing
            # the frame was read and checksummed before being discarded
            finish = self._enqueue(t)
            return None, finish
        if frame.unit_id == 0:
            finish = self._enqueue(t)
            self.message_count += 1
            self._respond_pdu(frame.function, frame.payload, False, broadcast=True)
            return None, finish
        if frame.unit_id != self.unit_id:
            return None, t
        if len(self._backlog) >= self.busy_threshold:
            pdu = codec.make_exception(frame.function, codec.EXC_SERVER_BUSY)
            self.exception_count += 1
            if self.listen_only:
                return None, t + BUSY_REPLY_COST
            return codec.encode_rtu(frame.unit_id, pdu), t + BUSY_REPLY_COST
        finish = self._enqueue(t)
        self.message_count += 1
        pdu = self._respond_pdu(frame.function, frame.payload, False)
        if pdu is None:
            return None, finish
        return codec.encode_rtu(frame.unit_id, pdu), finish

    def _busy_response(self, adu: codec.ModbusAdu, t: float) -> tuple[bytes | None, float]:
        self.exception_count += 1
        if self.listen_only:
            return None, t + BUSY_REPLY_COST
        pdu = codec.make_exception(adu.function, codec.EXC_SERVER_BUSY)
        out = codec.ModbusAdu(adu.transaction_id, adu.unit_id, pdu[0], pdu[1:])
        return codec.encode_adu(out), t + BUSY_REPLY_COST

    # --- PDU dispatch ---

    def _respond_pdu(self, function: int, payload: bytes, length_mismatch: bool,
                     broadcast: bool = False) -> bytes | None:
        pdu = self._execute(function, payload, length_mismatch)
        if pdu is not None and pdu[0] & 0x80:
            self.exception_count += 1
        # A restart-communications request clears listen_only during execution,
        # so checking the flag afterwards lets exactly that one echo escape.
        if broadcast or self.listen_only:
            return None
        return pdu

    def _execute(self, function: int, payload: bytes, length_mismatch: bool) -> bytes:
        if length_mismatch:
            return codec.make_exception(function, codec.EXC_ILLEGAL_DATA_VALUE)
        if (function & 0x7F) != function or function not in codec.SUPPORTED_FUNCTIONS:
            return codec.make_exception(function, codec.EXC_ILLEGAL_FUNCTION)
        try:
            handler = _HANDLERS[function]
        except KeyError:
            return codec.make_exception(function, codec.EXC_ILLEGAL_FUNCTION)
        try:
            return handler(self, payload)
        except OutOfBounds:
            return codec.make_exception(function, codec.EXC_ILLEGAL_DATA_ADDRESS)
        except (struct.error, ValueError, IndexError):
            return codec.make_exception(function, codec.EXC_ILLEGAL_DATA_VALUE)

    # --- per-function handlers ---

    def _read_bits(self, function: int, payload: bytes) -> bytes:
        address, quantity = struct.unpack(">HH", payload[:4])
        if not 1 <= quantity <= MAX_BITS_PER_READ:
            return codec.make_exception(function, codec.EXC_ILLEGAL_DATA_VALUE)
        bits = self.table.read_bits(_READ_SPACES[function], address, quantity)
        count = (quantity + 7) // 8
        packed = bytearray(count)
        for i, bit in enumerate(bits):
            if bit:
                packed[i // 8] |= 1 << (i % 8)
        return bytes([function, count]) + bytes(packed)

    def _read_words(self, function: int, payload: bytes) -> bytes:
        address, quantity = struct.unpack(">HH", payload[:4])
        if not 1 <= quantity <= MAX_WORDS_PER_READ:
            return codec.make_exception(function, codec.EXC_ILLEGAL_DATA_VALUE)
        words = self.table.read_words(_READ_SPACES[function], address, quantity)
        return bytes([function, 2 * quantity]) + struct.pack(f">{quantity}H", *words)

    def _handle_read_coils(self, payload: bytes) -> bytes:
        return self._read_bits(codec.FN_READ_COILS, payload)

    def _handle_read_inputs(self, payload: bytes) -> bytes:
        return self._read_bits(codec.FN_READ_DISCRETE_INPUTS, payload)

    def _handle_read_holding(self, payload: bytes) -> bytes:
        return self._read_words(codec.FN_READ_HOLDING_REGISTERS, payload)

    def _handle_read_input_regs(self, payload: bytes) -> bytes:
        return self._read_words(codec.FN_READ_INPUT_REGISTERS, payload)

    def _handle_write_coil(self, payload: bytes) -> bytes:
        address, value = struct.unpack(">HH", payload[:4])
        if value not in (0x0000, 0xFF00):
            return codec.make_exception(codec.FN_WRITE_SINGLE_COIL,
                                        codec.EXC_ILLEGAL_DATA_VALUE)
        self.table.write_bits(Space.COIL, address, [value == 0xFF00], privileged=True)
        return bytes([codec.FN_WRITE_SINGLE_COIL]) + payload[:4]

    def _handle_write_register(self, payload: bytes) -> bytes:
        address, value = struct.unpack(">HH", payload[:4])
        self.table.write_words(Space.HOLDING_REGISTER, address, [value], privileged=True)
        return bytes([codec.FN_WRITE_SINGLE_REGISTER]) + payload[:4]

    def _handle_write_coils(self, payload: bytes) -> bytes:
        address, quantity, count = struct.unpack(">HHB", payload[:5])
        if not 1 <= quantity <= MAX_BITS_PER_WRITE or count != (quantity + 7) // 8:
            return codec.make_exception(codec.FN_WRITE_MULTIPLE_COILS,
                                        codec.EXC_ILLEGAL_DATA_VALUE)
        blob = payload[5:5 + count]
        if len(blob) != count:
            return codec.make_exception(codec.FN_WRITE_MULTIPLE_COILS,
                                        codec.EXC_ILLEGAL_DATA_VALUE)
        bits = [bool(blob[i // 8] & (1 << (i % 8))) for i in range(quantity)]
        self.table.write_bits(Space.COIL, address, bits, privileged=True)
        return struct.pack(">BHH", codec.FN_WRITE_MULTIPLE_COILS, address, quantity)

    def _handle_write_registers(self, payload: bytes) -> bytes:
        address, quantity, count = struct.unpack(">HHB", payload[:5])
        if not 1 <= quantity <= MAX_WORDS_PER_WRITE or count != 2 * quantity:
            return codec.make_exception(codec.FN_WRITE_MULTIPLE_REGISTERS,
                                        codec.EXC_ILLEGAL_DATA_VALUE)
        blob = payload[5:5 + count]
        if len(blob) != count:
            return codec.make_exception(codec.FN_WRITE_MULTIPLE_REGISTERS,
                                        codec.EXC_ILLEGAL_DATA_VALUE)
        words = list(struct.unpack(f">{quantity}H", blob))
        self.table.write_words(Space.HOLDING_REGISTER, address, words, privileged=True)
        return struct.pack(">BHH", codec.FN_WRITE_MULTIPLE_REGISTERS, address, quantity)

    def _handle_diagnostics(self, payload: bytes) -> bytes:
        sub = struct.unpack(">H", payload[:2])[0]
        if sub == codec.DIAG_RESTART_COMMS:
            self.listen_only = False
            return bytes([codec.FN_DIAGNOSTICS]) + payload
        if sub == codec.DIAG_FORCE_LISTEN_ONLY:
            self.listen_only = True
            return bytes([codec.FN_DIAGNOSTICS]) + payload
        if sub == codec.DIAG_CLEAR_COUNTERS:
            self.message_count = 0
            self.crc_error_count = 0
            self.exception_count = 0
            return bytes([codec.FN_DIAGNOSTICS]) + payload
        return codec.make_exception(codec.FN_DIAGNOSTICS, codec.EXC_ILLEGAL_FUNCTION)

    def _handle_report_server_id(self, payload: bytes) -> bytes:
        body = SERVER_ID_TEXT + b"\xff"  # run indicator: on
        return bytes([codec.FN_REPORT_SERVER_INFO, len(body)]) + body

    def _handle_device_identification(self, payload: bytes) -> bytes:
        if len(payload) < 1 or payload[0] != 0x0E:
            return codec.make_exception(codec.FN_ENCAPSULATED_INTERFACE,
                                        codec.EXC_ILLEGAL_FUNCTION)
        objects = b"".join(
            bytes([idx, len(text)]) + text.encode("ascii")
            for idx, text in enumerate(DEVICE_ID_OBJECTS)
        )
        head = bytes([codec.FN_ENCAPSULATED_INTERFACE, 0x0E, 0x01, 0x01, 0x00, 0x00,
                      len(DEVICE_ID_OBJECTS)])
        return head + objects


_HANDLERS = {
    codec.FN_READ_COILS: SlaveLogic._handle_read_coils,
    codec.FN_READ_DISCRETE_INPUTS: SlaveLogic._handle_read_inputs,
    codec.FN_READ_HOLDING_REGISTERS: SlaveLogic._handle_read_holding,
    codec.FN_READ_INPUT_REGISTERS: SlaveLogic._handle_read_input_regs,
    codec.FN_WRITE_SINGLE_COIL: SlaveLogic._handle_write_coil,
    codec.FN_WRITE_SINGLE_REGISTER: SlaveLogic._handle_write_register,
    codec.FN_WRITE_MULTIPLE_COILS: SlaveLogic._handle_write_coils,
    codec.FN_WRITE_MULTIPLE_REGISTERS: SlaveLogic._handle_write_registers,
    codec.FN_DIAGNOSTICS: SlaveLogic._handle_diagnostics,
    codec.FN_REPORT_SERVER_INFO: SlaveLogic._handle_report_server_id,
    codec.FN_ENCAPSULATED_INTERFACE: SlaveLogic._handle_device_identification,
}


class SlaveService(Service):
    """Adapter exposing the slave on the in-process fabric."""

    def __init__(self, logic: SlaveLogic) -> None:
        self.logic = logic

    def on_data(self, conn: Connection, data: bytes, t: float) -> None:
        response, finish = self.logic.handle_frame(data, t)
        if response is not None:
            conn.reply(response, at=finish)


def split_stream(buffer: bytearray) -> bytes | None:
    """Pops one frame off a TCP byte stream, or None if more is needed."""
    if len(buffer) < 8:
        return None
    if codec.looks_like_mbap(bytes(buffer[:8])):
        declared = struct.unpack(">H", buffer[4:6])[0]
        total = 6 + declared
        if len(buffer) < total:
            return None
        frame = bytes(buffer[:total])
        del buffer[:total]
        return frame
    frame = bytes(buffer)
    buffer.clear()
    return frame


class ModbusTcpServer:
    """Real-socket front end for interactive use."""

    def __init__(self, logic: SlaveLogic, host: str = "127.0.0.1", port: int = 0) -> None:
        self.logic = logic
        self._lock = threading.Lock()
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self) -> None:
                buffer = bytearray()
                clock = 0.0
                while True:
                    frame = split_stream(buffer)
                    if frame is None:
                        try:
                            chunk = self.request.recv(4096)
                        except OSError:
                            return
                        if not chunk:
                            return
                        buffer.extend(chunk)
                        continue
                    with outer._lock:
                        response, clock = outer.logic.handle_frame(frame, clock)
                    if response is not None:
                        try:
                            self.request.sendall(response)
                        except OSError:
                            return

        class ReusableServer(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self.server = ReusableServer((host, port), Handler)
        self.address = self.server.server_address
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


def exchange(sock: socket.socket, request: bytes, timeout: float = 2.0) -> bytes:
    """Sends one MBAP frame on a connected socket and reads one response."""
    sock.settimeout(timeout)
    sock.sendall(request)
    head = b""
    while len(head) < 7:
        chunk = sock.recv(7 - len(head))
        if not chunk:
            raise ConnectionError("peer closed before response header")
        head += chunk
    declared = struct.unpack(">H", head[4:6])[0]
    body = b""
    while len(body) < declared - 1:
        chunk = sock.recv(declared - 1 - len(body))
        if not chunk:
            raise ConnectionError("peer closed mid-response")
        body += chunk
    return head + body
