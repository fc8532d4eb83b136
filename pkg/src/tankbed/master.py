"""Modbus master: executes the configured poll plan against the slave.

Poll rounds start every `repeat_time`; within a round, command i owns the
slot starting at `round_start + i * cmd_time`, and the slot length is also
the patience for that command's response. All outgoing requests (poll
commands and operator writes alike) funnel through one ordered queue, so
this master never has two requests in flight.

Failure handling: a timeout or an exception response raises the fault
marker (mirrored into all four local address spaces), suspends polling,
and retries the failed command every `retry_time`. A later success resumes
polling but leaves the fault latched; only a pulse on the fault-reset coil
clears it.
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass

from . import codec
from .netsim import Network
from .sim import Scheduler, Sleep, WaitUntil, spawn
from .table import DataTable, Space

POLL_FUNCTIONS = frozenset({1, 2, 3, 4, 5, 6, 15, 16})

_READ_SPACE = {
    1: Space.COIL,
    2: Space.DISCRETE_INPUT,
    3: Space.HOLDING_REGISTER,
    4: Space.INPUT_REGISTER,
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PollCommand:
    name: str
    function: int
    unit_id: int
    local_addr: int
    remote_addr: int
    qty: int


@dataclass(frozen=True)
class PollPlan:
    name: str
    host: str
    port: int
    repeat_time: float
    cmd_time: float
    retry_time: float
    fault_coil: int
    fault_reset: int
    commands: tuple[PollCommand, ...]


def _parse_command(name: str, text: str) -> PollCommand:
    fields = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"command {name}: malformed clause {part!r}")
        key, value = (s.strip() for s in part.split("=", 1))
        try:
            fields[key] = int(value)
        except ValueError:
            raise ConfigError(f"command {name}: non-numeric {key}={value!r}") from None
    missing = {"function", "uid", "memaddr", "qty", "remoteaddr"} - fields.keys()
    if missing:
        raise ConfigError(f"command {name}: missing {sorted(missing)}")
    if fields["function"] not in POLL_FUNCTIONS:
        raise ConfigError(f"command {name}: unsupported function {fields['function']}")
    if fields["qty"] < 1:
        raise ConfigError(f"command {name}: qty must be >= 1")
    return PollCommand(name, fields["function"], fields["uid"],
                       fields["memaddr"], fields["remoteaddr"], fields["qty"])


def parse_client_config(text: str, section: str | None = None) -> PollPlan:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_string(text)
    names = parser.sections()
    if not names:
        raise ConfigError("no client section found")
    section = section or names[0]
    conf = parser[section]
    for key in ("host", "port"):
        if key not in conf:
            raise ConfigError(f"[{section}] missing {key}")
    if conf.get("action", "poll") != "poll":
        raise ConfigError(f"[{section}] unsupported action {conf.get('action')!r}")
    commands = tuple(_parse_command(key, conf[key])
                     for key in conf if key.startswith("&"))
    return PollPlan(
        name=section,
        host=conf["host"],
        port=int(conf["port"]),
        repeat_time=int(conf.get("repeattime", 100)) / 1000.0,
        cmd_time=int(conf.get("cmdtime", 100)) / 1000.0,
        retry_time=int(conf.get("retrytime", 5000)) / 1000.0,
        fault_coil=int(conf.get("fault_coil", 1340)),
        fault_reset=int(conf.get("fault_reset", 65283)),
        commands=commands,
    )


@dataclass(frozen=True)
class RequestRecord:
    t_sent: float
    name: str
    latency: float | None   # None marks a timeout
    ok: bool


class MasterPoller:
    def __init__(self, sched: Scheduler, net: Network, table: DataTable,
                 plan: PollPlan, src_ip: str, phase: float = 0.0) -> None:
        self.sched = sched
        self.net = net
        self.table = table
        self.plan = plan
        self.src_ip = src_ip
        self.phase = phase
        self.fault = False
        self.backoff = False
        self.records: list[RequestRecord] = []
        self.fault_transitions: list[tuple[float, bool]] = []
        self._queue: list[tuple[PollCommand, object | None]] = []
        self._busy = False
        self._conn = None
        self._txn = 0

    # --- lifecycle ---

    def start(self) -> None:
        spawn(self.sched, self._run())

    def _run(self):
        epoch = self.sched.now
        self._conn = yield self.net.open(self.src_ip, self.plan.host,
                                         self.plan.port, timeout=1.0)
        if self._conn is None:
            self._set_fault(True)
            return
        round_start = epoch + self.phase
        while round_start < self.sched.now:
            round_start += self.plan.repeat_time
        while True:
            yield WaitUntil(round_start)
            self._check_fault_reset()
            if not self.backoff:
                spawn(self.sched, self._round(round_start))
            round_start += self.plan.repeat_time

    def _round(self, start: float):
        for i, command in enumerate(self.plan.commands):
            yield WaitUntil(start + i * self.plan.cmd_time)
            if self.backoff:
                return
            self._enqueue(command)

    # --- ordered request queue ---

    def _enqueue(self, command: PollCommand, done=None) -> None:
        self._queue.append((command, done))
        if not self._busy:
            self._busy = True
            spawn(self.sched, self._drain())

    def _drain(self):
        while self._queue:
            command, done = self._queue.pop(0)
            ok = yield from self._execute(command)
            if done is not None:
                done(ok)
            if not ok:
                self._queue.clear()
                self.backoff = True
                spawn(self.sched, self._retry(command))
                break
        self._busy = False

    def _retry(self, command: PollCommand):
        while True:
            yield Sleep(self.plan.retry_time)
            ok = yield from self._execute(command)
            if ok:
                self.backoff = False
                return

    # --- single command execution ---

    def _next_txn(self) -> int:
        self._txn = self._txn % 0xFFFF + 1
        return self._txn

    def _request_payload(self, command: PollCommand) -> bytes:
        fn = command.function
        if fn in _READ_SPACE:
            return codec.build_read(command.remote_addr, command.qty)
        if fn == 16:
            values = self.table.read_words(Space.HOLDING_REGISTER,
                                           command.local_addr, command.qty)
            return codec.build_write_registers(command.remote_addr, values)
        if fn == 15:
            bits = self.table.read_bits(Space.COIL, command.local_addr, command.qty)
            return codec.build_write_coils(command.remote_addr, bits)
        if fn == 6:
            value = self.table.read_words(Space.HOLDING_REGISTER, command.local_addr, 1)[0]
            return codec.build_write_single(command.remote_addr, value)
        if fn == 5:
            bit = self.table.read_bits(Space.COIL, command.local_addr, 1)[0]
            return codec.build_write_single(command.remote_addr, 0xFF00 if bit else 0)
        raise ConfigError(f"unsupported poll function {fn}")

    def _execute(self, command: PollCommand):
        payload = self._request_payload(command)
        adu = codec.ModbusAdu(self._next_txn(), command.unit_id,
                              command.function, payload)
        t_sent = self.sched.now
        raw = yield self.net.request(self._conn, codec.encode_adu(adu),
                                     timeout=self.plan.cmd_time)
        if raw is None:
            self.records.append(RequestRecord(t_sent, command.name, None, False))
            self._set_fault(True)
            return False
        latency = self.sched.now - t_sent
        try:
            decoded = codec.decode_adu(raw)
        except codec.CodecError:
            self.records.append(RequestRecord(t_sent, command.name, latency, False))
            self._set_fault(True)
            return False
        if decoded.adu.is_exception:
            self.records.append(RequestRecord(t_sent, command.name, latency, False))
            self._set_fault(True)
            return False
        self._store(command, decoded.adu)
        self.records.append(RequestRecord(t_sent, command.name, latency, True))
        return True

    def _store(self, command: PollCommand, adu: codec.ModbusAdu) -> None:
        fn = command.function
        if fn in (3, 4):
            values = codec.parse_register_response(adu.payload)[:command.qty]
            self.table.write_words(_READ_SPACE[fn], command.local_addr,
                                   values, privileged=True)
        elif fn in (1, 2):
            bits = codec.parse_bit_response(adu.payload, command.qty)
            self.table.write_bits(_READ_SPACE[fn], command.local_addr,
                                  bits, privileged=True)
        # write functions carry nothing to store

    # --- fault marker ---

    def _set_fault(self, value: bool) -> None:
        if self.fault != value:
            self.fault = value
            self.fault_transitions.append((self.sched.now, value))
        self.table.set_fault(value)

    def _check_fault_reset(self) -> None:
        if self.table.read_bits(Space.COIL, self.plan.fault_reset, 1)[0]:
            self.table.write_bits(Space.COIL, self.plan.fault_reset, [False],
                                  privileged=True)
            self._set_fault(False)

    # --- operator path ---

    def send_write(self, register: int, value: int, done=None) -> None:
        """Queues an FC16 single-register write (HMI pump/threshold path)."""
        command = PollCommand(f"write[{register}]", 16, 1, register, register, 1)
        self.table.write_words(Space.HOLDING_REGISTER, register,
                               [value & 0xFFFF], privileged=True)
        self._enqueue(command, done)
