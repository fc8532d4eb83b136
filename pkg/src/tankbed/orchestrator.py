"""Wires the tank process, soft PLC, master poller, gateway, IDS, and
honeypot onto one simulated clock, runs attack scenarios against the
assembled plant, and writes the per-scenario dataset pair (a packet
capture and an alert log).

Per 100 ms tick the coordinator advances the physics, lets the master's
own schedule poll, then copies the slave table into the PLC image and
runs one ladder scan.  Attacker tasks ride the same scheduler, so their
traffic interleaves at exact, reproducible instants: running a scenario
twice with one seed produces byte-identical files.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .attack import ATTACKER_IP, SCENARIOS, AttackEnv
from .gateway import ChainPolicy, Gateway
from .honeypot import parse_fingerprint_db, parse_honeyd_config
from .ids import AddressSet, Engine, parse_rules
from .logic import LogicTable, parse_program, scan_cycle
from .master import MasterPoller, parse_client_config
from .netsim import Network, SegmentPlan
from .pcap import write_pcap
from .sim import Scheduler, WaitUntil, spawn
from .slave import SlaveLogic, SlaveService
from .table import (
    DataTable,
    Space,
    THRESH_H_REG,
    parse_address_map,
    to_signed,
    transfer,
)
from .tanks import TankProcess, Thresholds, classify_level

TICK = 0.1
MASTER_IP = "10.0.0.3"
SLAVE_IP = "10.0.0.4"
POLL_PHASE = 0.03       # master rounds fire this far into each tick
SCAN_PHASE = 0.06       # ladder scan runs after the poll round settles

# Y-bank outputs the shipped ladder drives; full = at/above the HH mark.
ALARM_BITS = (
    ("tank1_full", 30),
    ("tank2_full", 31),
    ("tank1_high", 32),
    ("tank2_high", 33),
)


class TopologyError(Exception):
    """A component config failed to parse or bind."""


# --- HMI tag catalog ----------------------------------------------------

_ADDRTYPE = {
    "coil": Space.COIL,
    "inp": Space.DISCRETE_INPUT,
    "inpreg": Space.INPUT_REGISTER,
    "holdingreg": Space.HOLDING_REGISTER,
}


@dataclass(frozen=True)
class HmiTag:
    name: str
    datatype: str
    space: Space
    address: int
    lo: float
    hi: float
    offset: float
    factor: float

    def scaled(self, raw: int) -> float:
        return self.offset + self.factor * to_signed(raw)

    def raw_for(self, value: float) -> int:
        return round((value - self.offset) / self.factor)


def _split_pair(text: str, key: str, section: str) -> tuple[float, float]:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise TopologyError(f"[{section}] {key} needs two comma numbers")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise TopologyError(f"[{section}] {key}: {exc}") from None


def parse_hmi_tags(text: str) -> dict[str, HmiTag]:
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise TopologyError(f"hmi config: {exc}") from None
    tags: dict[str, HmiTag] = {}
    for section in parser.sections():
        row = parser[section]
        try:
            addrtype = row["addrtype"].strip()
            memaddr = int(row["memaddr"])
            datatype = row.get("datatype", "integer").strip()
        except (KeyError, ValueError) as exc:
            raise TopologyError(f"[{section}]: {exc}") from None
        if addrtype not in _ADDRTYPE:
            raise TopologyError(f"[{section}] unknown addrtype {addrtype!r}")
        if not 0 <= memaddr <= 65535:
            raise TopologyError(f"[{section}] memaddr out of range")
        lo, hi = _split_pair(row.get("range", "0, 65535"), "range", section)
        offset, factor = _split_pair(row.get("scale", "0, 1"), "scale", section)
        if factor == 0:
            raise TopologyError(f"[{section}] scale factor must be nonzero")
        tags[section] = HmiTag(section, datatype, _ADDRTYPE[addrtype],
                               memaddr, lo, hi, offset, factor)
    if not tags:
        raise TopologyError("hmi config defines no tags")
    return tags


# --- topology assembly --------------------------------------------------

_REQUIRED_FILES = ("plcprog.txt", "mblogic.config", "mbclient.config",
                   "mbhmi.config", "modbus.rules")


def _default_config_dir() -> Path:
    return Path(str(resources.files("tankbed").joinpath("data")))


class Topology:
    """Everything one plant run needs, bound to a single scheduler."""

    def __init__(self, config_dir: Path, seed: int = 0,
                 gateway_mode: str = "ids") -> None:
        self.config_dir = config_dir
        self.seed = seed
        self.sched = Scheduler()
        self.plan = SegmentPlan()
        self.lock = threading.RLock()
        self._started = False

        def read(name: str) -> str:
            path = config_dir / name
            try:
                return path.read_text()
            except OSError as exc:
                raise TopologyError(f"{name}: {exc}") from None

        for name in _REQUIRED_FILES:
            if not (config_dir / name).exists():
                raise TopologyError(f"{name}: missing from {config_dir}")

        # Detection chain first so the network can route through it.
        variables = {
            "MODBUS_CLIENT": AddressSet([MASTER_IP, self.plan.attack]),
            "MODBUS_SERVER": AddressSet([self.plan.target]),
        }
        try:
            self.ids = Engine(parse_rules(read("modbus.rules"), variables))
        except Exception as exc:
            raise TopologyError(f"modbus.rules: {exc}") from None
        self.gateway = Gateway(ChainPolicy(), inspector=self.ids,
                               mode=gateway_mode)
        self.net = Network(self.sched, self.plan, gateway=self.gateway)

        # Slave with live tank physics behind it.
        self.slave_table = DataTable()
        self.slave_logic = SlaveLogic(self.slave_table)
        self.net.add_host(SLAVE_IP)
        self.net.add_service(SLAVE_IP, 502, SlaveService(self.slave_logic))
        self.thresholds = Thresholds()
        self.slave_table.write_words(
            Space.HOLDING_REGISTER, THRESH_H_REG,
            [self.thresholds.h, self.thresholds.l,
             self.thresholds.hh, self.thresholds.ll],
            privileged=True)
        self.process = TankProcess(self.slave_table,
                                   thresholds=self.thresholds)
        self.process.write_back()

        # Soft PLC image and ladder program.
        try:
            self.program = parse_program(read("plcprog.txt"))
        except Exception as exc:
            raise TopologyError(f"plcprog.txt: {exc}") from None
        try:
            self.map_entries = parse_address_map(read("mblogic.config"))
        except Exception as exc:
            raise TopologyError(f"mblogic.config: {exc}") from None
        self.logic = LogicTable()

        # Master poller with its own local table.
        try:
            self.poll_plan = parse_client_config(read("mbclient.config"))
        except Exception as exc:
            raise TopologyError(f"mbclient.config: {exc}") from None
        self.master_table = DataTable()
        self.master_table.write_words(
            Space.HOLDING_REGISTER, THRESH_H_REG,
            [self.thresholds.h, self.thresholds.l,
             self.thresholds.hh, self.thresholds.ll],
            privileged=True)
        self.net.add_host(MASTER_IP)
        self.master = MasterPoller(self.sched, self.net, self.master_table,
                                   self.poll_plan, MASTER_IP,
                                   phase=POLL_PHASE)

        try:
            self.hmi_tags = parse_hmi_tags(read("mbhmi.config"))
        except TopologyError:
            raise
        except Exception as exc:
            raise TopologyError(f"mbhmi.config: {exc}") from None

        # Optional decoy hosts.
        self.honeypot_nodes: dict[str, object] = {}
        self.personalities: dict = {}
        honeyd = config_dir / "honeyd.config"
        osdb = config_dir / "nmap-os.db"
        if honeyd.exists():
            if not osdb.exists():
                raise TopologyError("nmap-os.db: missing from "
                                    f"{config_dir} (honeyd.config present)")
            try:
                self.personalities = parse_fingerprint_db(read("nmap-os.db"))
                decoys = parse_honeyd_config(read("honeyd.config"))
                nodes = decoys.build_nodes(self.personalities, seed=seed,
                                           script_dir=config_dir)
            except Exception as exc:
                raise TopologyError(f"honeyd.config: {exc}") from None
            if len(nodes) != len(decoys.binds):
                raise TopologyError("honeyd.config: duplicate address binding")
            for ip, node in sorted(nodes.items()):
                try:
                    self.net.bind_honeypot(ip, node)
                except ValueError as exc:
                    raise TopologyError(f"honeyd.config: {exc}") from None
            self.honeypot_nodes = nodes

        self.coordinator = Coordinator(self)

    @property
    def target_ip(self) -> str:
        """Default scenario target: the decoy front if one is up."""
        return min(self.honeypot_nodes) if self.honeypot_nodes else SLAVE_IP

    def start(self) -> None:
        if self._started:
            return
        self._started = True
        self.master.start()
        spawn(self.sched, self.coordinator.run())

    def attack_env(self, *, rate: float = 1.0,
                   target: str | None = None, port: int = 502) -> AttackEnv:
        coord = self.coordinator
        return AttackEnv(
            net=self.net,
            attacker_ip=ATTACKER_IP,
            target_ip=target or self.target_ip,
            target_port=port,
            seed=self.seed,
            rate=rate,
            alarm_active=lambda: coord.alarm,
            mark_attack_start=coord.mark_attack,
            personalities=self.personalities or None,
        )


def load_topology(config_dir: str | Path | None = None, *, seed: int = 0,
                  gateway_mode: str = "ids") -> Topology:
    """Builds the full plant from a config directory (package defaults
    when none is given).  Any config problem aborts with its origin."""
    path = Path(config_dir) if config_dir is not None else _default_config_dir()
    if not path.is_dir():
        raise TopologyError(f"config directory {path} not found")
    return Topology(path, seed=seed, gateway_mode=gateway_mode)


# --- the tick loop ------------------------------------------------------

class Coordinator:
    """Single owner of the per-tick phase order.

    Phase offsets within each 100 ms tick: physics and sensor write-back
    at +0, the master's poll round at +30 (driven by the poller's own
    schedule), table-to-PLC transfer plus one ladder scan at +60.
    Operator writes injected from another thread drain at the top of the
    next tick, so nothing mutates plant state mid-phase.
    """

    def __init__(self, topology: Topology) -> None:
        self.top = topology
        self.ticks = 0
        self.alarm = False
        self.warning = False
        self.alarm_trace: list[tuple[float, bool]] = []
        self.events: list[dict] = []
        self.attack_marks: list[float] = []
        self._bits = {name: False for name, _ in ALARM_BITS}
        self._fault_seen = False
        self._pending: list = []

    # -- operator injection --

    def submit(self, fn) -> None:
        with self.top.lock:
            self._pending.append(fn)

    def mark_attack(self) -> None:
        self.attack_marks.append(self.top.sched.now)

    @property
    def t_mark(self) -> float | None:
        return self.attack_marks[-1] if self.attack_marks else None

    # -- tick loop --

    def run(self):
        sched = self.top.sched
        epoch = sched.now
        while True:
            yield WaitUntil(epoch + self.ticks * TICK)
            self._drain_pending()
            self.top.process.step(TICK)
            self.top.process.write_back()
            yield WaitUntil(epoch + self.ticks * TICK + SCAN_PHASE)
            transfer(self.top.slave_table, self.top.logic,
                     self.top.map_entries)
            scan_cycle(self.top.program, self.top.logic)
            self._sample(sched.now)
            self.ticks += 1

    def _drain_pending(self) -> None:
        with self.top.lock:
            pending, self._pending = self._pending, []
        for fn in pending:
            fn()

    def _sample(self, now: float) -> None:
        logic = self.top.logic
        for name, index in ALARM_BITS:
            state = logic.get_bit("Y", index)
            if state != self._bits[name]:
                self._bits[name] = state
                self.events.append({"t": now, "name": name, "active": state})
        fault = self.top.master.fault
        if fault != self._fault_seen:
            self._fault_seen = fault
            self.events.append({"t": now, "name": "poll_fault",
                                "active": fault})
        alarm = self._bits["tank1_full"] or self._bits["tank2_full"]
        self.warning = self._bits["tank1_high"] or self._bits["tank2_high"]
        if alarm != self.alarm:
            self.alarm = alarm
            self.alarm_trace.append((now, alarm))

    # -- HMI-facing snapshot --

    def tag_snapshot(self) -> dict:
        top = self.top
        table = top.master_table
        tags = {}
        for name, tag in top.hmi_tags.items():
            if tag.space in (Space.COIL, Space.DISCRETE_INPUT):
                raw = int(table.get_bit(tag.space, tag.address))
            else:
                raw = table.get_word(tag.space, tag.address)
            value = tag.scaled(raw)
            entry = {"value": value, "lo": tag.lo, "hi": tag.hi,
                     "in_range": tag.lo <= value <= tag.hi}
            if name.lower().endswith("level"):
                entry["band"] = classify_level(value, self._thresholds()).value
            tags[name] = entry
        speed = to_signed(table.get_word(Space.HOLDING_REGISTER,
                                         top.hmi_tags["PumpSpeed"].address)
                          if "PumpSpeed" in top.hmi_tags else 0)
        return {
            "time": round(top.sched.now, 6),
            "tags": tags,
            "alarm": self.alarm,
            "warning": self.warning,
            "alarms": dict(self._bits),
            "pump": "Fwd" if speed > 0 else "Rev" if speed < 0 else "Stp",
            "poll_fault": top.master.fault,
        }

    def _thresholds(self) -> Thresholds:
        """Display thresholds come from the polled copies; fall back to
        the plant defaults whenever the polled values are unusable."""
        words = self.top.master_table.read_words(Space.HOLDING_REGISTER,
                                                 THRESH_H_REG, 4)
        h, l, hh, ll = (to_signed(w) for w in words)
        try:
            return Thresholds(hh=hh, h=h, l=l, ll=ll)
        except ValueError:
            return self.top.thresholds


# --- scenario runs ------------------------------------------------------

@dataclass
class DatasetBundle:
    code: str
    capture_path: Path
    alert_path: Path
    alarm_trace: list[tuple[float, bool]] = field(default_factory=list)
    expected_alarm: bool = False
    observed_alarm: bool = False
    verdict: str = "fail"
    note: str = ""
    frame_count: int = 0
    alert_count: int = 0
    finished: bool = True


def dataset_names(code: str) -> tuple[str, str]:
    stem = code.replace("-", "_")
    return f"{stem}_TDP.out", f"{stem}_SNT.log"


SETTLE_TIME = 0.5
DRAIN_TIME = 2.0
SCENARIO_TIME_LIMIT = 5000.0


def run_scenario(topology: Topology, code: str, out_dir: str | Path = ".",
                 *, rate: float = 1.0) -> DatasetBundle:
    """Runs one catalog scenario on a fresh topology and writes its
    capture/alert pair.  The verdict compares the observed alarm
    behavior after the attack began against the catalog expectation."""
    if code not in SCENARIOS:
        known = " ".join(sorted(SCENARIOS))
        raise ValueError(f"unknown scenario {code!r} (known: {known})")
    scenario = SCENARIOS[code]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sched = topology.sched
    coord = topology.coordinator

    topology.start()
    sched.run_until(sched.now + SETTLE_TIME)

    env = topology.attack_env(rate=rate)
    coord.mark_attack()
    proc = spawn(sched, scenario.build(env))
    deadline = sched.now + SCENARIO_TIME_LIMIT
    sched.run_while(lambda: not proc.done and sched.now < deadline,
                    t_max=deadline)
    finished = proc.done
    t_attack_end = sched.now
    sched.run_until(sched.now + DRAIN_TIME)

    # The verdict window is the attack's own duration: a masking attack
    # is judged while it masks, not after it stops and the plant recovers.
    t_mark = coord.t_mark or 0.0
    observed = any(v and t_mark < t <= t_attack_end
                   for t, v in coord.alarm_trace)

    cap_name, log_name = dataset_names(code)
    capture_path = out / cap_name
    alert_path = out / log_name
    write_pcap(capture_path, topology.gateway.capture)
    lines = topology.ids.alert_lines()
    alert_path.write_text("".join(line + "\n" for line in lines))

    note = scenario.note
    if not finished:
        note = (note + " | scenario hit the time limit "
                f"at t={sched.now:.1f}").strip(" |")
    verdict = "pass" if (finished and observed == scenario.expected_alarm) \
        else "fail"
    return DatasetBundle(
        code=code,
        capture_path=capture_path,
        alert_path=alert_path,
        alarm_trace=list(coord.alarm_trace),
        expected_alarm=scenario.expected_alarm,
        observed_alarm=observed,
        verdict=verdict,
        note=note,
        frame_count=len(topology.gateway.capture),
        alert_count=len(lines),
        finished=finished,
    )


def run_all(out_dir: str | Path = ".", *, seed: int = 0,
            config_dir: str | Path | None = None,
            rate: float = 1.0) -> list[DatasetBundle]:
    """Fresh topology per scenario so runs cannot contaminate each
    other; same seed everywhere keeps the suite reproducible."""
    bundles = []
    for code in sorted(SCENARIOS):
        topology = load_topology(config_dir, seed=seed)
        bundles.append(run_scenario(topology, code, out_dir, rate=rate))
    return bundles
