"""Low-interaction decoy hosts.

Two config dialects feed this module: scanner fingerprint databases
(blocks of TESTNAME(key=value%...) lines) that describe how an operating
system answers probes, and a honeyd-style node configuration that binds
personalities, port actions, scripts and proxies to addresses.  Bound
nodes answer probe and connection requests from the packet fabric.
"""
from __future__ import annotations

import select
import shlex
import subprocess
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

from .netsim import HOST_TCP_FIELDS, Connection, Service

TEST_BLOCKS = ("SEQ", "OPS", "WIN", "ECN", "T1", "T2", "T3", "T4", "T5",
               "T6", "T7", "U1", "IE")

SCRIPT_SPAWN_WAIT = 2.0    # wall-clock bound on waiting for script output
SCRIPT_QUIET_WINDOW = 0.3  # output considered complete after this silence


class ConfigError(ValueError):
    pass


@dataclass
class Personality:
    name: str
    classes: list[str] = field(default_factory=list)
    cpe: list[str] = field(default_factory=list)
    tests: dict[str, dict[str, str]] = field(default_factory=dict)

    def value(self, block: str, key: str) -> str | None:
        return self.tests.get(block, {}).get(key)

    def syn_ack_fields(self) -> dict:
        """One concrete choice of the TCP descriptor fields.

        Window and options come from the first window/option test, TTL and
        the dont-fragment bit from the SYN-response block.
        """
        fields = dict(HOST_TCP_FIELDS)
        win = self.value("WIN", "W1")
        if win is not None:
            fields["window"] = concrete_int(win)
        ops = self.value("OPS", "O1")
        if ops is not None:
            fields["options"] = decode_option_string(concrete_value(ops))
        ttl = self.value("T1", "T") or self.value("ECN", "T")
        if ttl is not None:
            fields["ttl"] = concrete_int(ttl)
        df = self.value("T1", "DF") or self.value("ECN", "DF")
        if df is not None:
            fields["df"] = concrete_value(df) == "Y"
        return fields


def concrete_value(expr: str) -> str:
    """Pick one concrete value: first alternative, midpoint of a range."""
    first = expr.split("|")[0]
    if "-" in first:
        lo, _, hi = first.partition("-")
        try:
            return format((int(lo, 16) + int(hi, 16)) // 2, "X")
        except ValueError:
            pass
    return first


def concrete_int(expr: str) -> int:
    return int(concrete_value(expr), 16)


def decode_option_string(text: str) -> tuple:
    """Decode a scanner option string like M200NW0 into option tuples."""
    out = []
    i = 0
    while i < len(text):
        letter = text[i]
        i += 1
        digits = ""
        if letter in ("M", "W", "T"):
            while i < len(text) and text[i] in "0123456789ABCDEFabcdef":
                digits += text[i]
                i += 1
            if letter != "T" and not digits:
                raise ConfigError(f"option {letter} needs a value in {text!r}")
        if letter == "M":
            out.append(("MSS", int(digits, 16)))
        elif letter == "N":
            out.append(("NOP",))
        elif letter == "W":
            out.append(("WS", int(digits, 16)))
        elif letter == "S":
            out.append(("SACK",))
        elif letter == "T":
            out.append(("TS", (0, 0)))
        elif letter == "L":
            break
        else:
            raise ConfigError(f"unknown option letter {letter!r} in {text!r}")
    return tuple(out)


def parse_fingerprint_db(text: str) -> dict[str, Personality]:
    """Parse fingerprint blocks; test lines may wrap until their ')'."""
    personalities: dict[str, Personality] = {}
    current: Personality | None = None
    pending = ""
    for raw in text.splitlines():
        line = raw.strip()
        if pending:
            pending += line
            if ")" not in line:
                continue
            line = pending
            pending = ""
        if not line or line.startswith("#"):
            continue
        if line.startswith("Fingerprint "):
            current = Personality(line[len("Fingerprint "):].strip())
            personalities[current.name] = current
            continue
        if current is None:
            raise ConfigError(f"directive before any Fingerprint: {line!r}")
        if line.startswith("Class "):
            current.classes.append(line[len("Class "):].strip())
            continue
        if line.startswith("CPE "):
            current.cpe.append(line[len("CPE "):].strip())
            continue
        name, paren, rest = line.partition("(")
        if not paren:
            raise ConfigError(f"unrecognized fingerprint line {line!r}")
        if ")" not in rest:
            pending = line
            continue
        body = rest[:rest.index(")")]
        if name not in TEST_BLOCKS:
            warnings.warn(f"skipping unknown test block {name!r}")
            continue
        block: dict[str, str] = {}
        if body:
            for pair in body.split("%"):
                key, eq, value = pair.partition("=")
                if not eq:
                    raise ConfigError(f"malformed test pair {pair!r} in {name}")
                block[key] = value
        current.tests[name] = block
    if pending:
        raise ConfigError(f"unterminated test block {pending!r}")
    return personalities


# ------------------------------------------------------------------ nodes

@dataclass(frozen=True)
class PortBinding:
    kind: str                     # "open" | "script" | "proxy"
    command: str | None = None
    target: tuple[str, int] | None = None


@dataclass
class HoneyProfile:
    name: str
    defaults: dict[str, str] = field(
        default_factory=lambda: {"tcp": "filtered", "udp": "filtered",
                                 "icmp": "filtered"})
    personality_name: str | None = None
    droprate: int = 0
    ethernet: str | None = None
    bindings: dict[tuple[str, int], PortBinding] = field(default_factory=dict)

    def copy_as(self, name: str) -> "HoneyProfile":
        return HoneyProfile(name, dict(self.defaults), self.personality_name,
                            self.droprate, self.ethernet, dict(self.bindings))


class HoneydConfig:
    def __init__(self) -> None:
        self.profiles: dict[str, HoneyProfile] = {}
        self.binds: list[tuple[str, str]] = []  # (ip, profile name)

    def build_nodes(self, personalities: dict[str, Personality] | None = None,
                    seed: int = 0, script_dir: str | Path | None = None
                    ) -> dict[str, "HoneyNode"]:
        nodes = {}
        for ip, profile_name in self.binds:
            profile = self.profiles[profile_name]
            personality = None
            if profile.personality_name and personalities is not None:
                if profile.personality_name not in personalities:
                    raise ConfigError(
                        f"profile {profile_name} wants personality "
                        f"{profile.personality_name!r} that the database lacks")
                personality = personalities[profile.personality_name]
            nodes[ip] = HoneyNode(ip, profile, personality,
                                  rng=Random(f"{seed}:{ip}"),
                                  script_dir=script_dir)
        return nodes


def _parse_proxy_target(token: str) -> tuple[str, int]:
    host, colon, port = token.rpartition(":")
    if not colon:
        raise ConfigError(f"proxy target needs host:port, got {token!r}")
    return host, int(port)


def parse_honeyd_config(text: str) -> HoneydConfig:
    config = HoneydConfig()
    logical: list[str] = []
    buffer = ""
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        buffer = f"{buffer} {line}".strip() if buffer else line
        if buffer.count('"') % 2 == 1:
            continue  # a quoted script command wrapped onto the next line
        logical.append(buffer)
        buffer = ""
    if buffer:
        raise ConfigError(f"unterminated quote in {buffer!r}")

    def profile_of(name: str) -> HoneyProfile:
        if name not in config.profiles:
            raise ConfigError(f"unknown profile {name!r}")
        return config.profiles[name]

    for line in logical:
        try:
            _apply_directive(config, profile_of, line)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed directive {line!r}") from exc
    return config


def _apply_directive(config: HoneydConfig, profile_of, line: str) -> None:
    words = shlex.split(line)
    verb = words[0]
    if verb == "create":
        config.profiles[words[1]] = HoneyProfile(words[1])
    elif verb == "clone":
        config.profiles[words[1]] = profile_of(words[2]).copy_as(words[1])
    elif verb == "set":
        profile = profile_of(words[1])
        what = words[2]
        if what == "default":
            if words[4] != "action":
                raise ConfigError(f"malformed default action: {line!r}")
            if words[5] not in ("open", "filtered", "block", "reset"):
                raise ConfigError(f"unknown default action {words[5]!r}")
            profile.defaults[words[3]] = words[5]
        elif what == "personality":
            profile.personality_name = words[3]
        elif what == "droprate":
            if words[3] != "in":
                raise ConfigError(f"malformed droprate: {line!r}")
            rate = int(words[4])
            if not 0 <= rate <= 100:
                raise ConfigError(f"droprate out of range: {rate}")
            profile.droprate = rate
        elif what == "ethernet":
            profile.ethernet = words[3]
        else:
            raise ConfigError(f"unknown set directive {what!r}")
    elif verb == "add":
        profile = profile_of(words[1])
        if words[3] != "port":
            raise ConfigError(f"malformed add: {line!r}")
        proto, port = words[2], int(words[4])
        key = (proto, port)
        if key in profile.bindings:
            raise ConfigError(
                f"{profile.name} binds {proto} port {port} twice")
        rest = words[5:]
        if rest == ["open"]:
            profile.bindings[key] = PortBinding("open")
        elif rest[0] == "proxy":
            profile.bindings[key] = PortBinding(
                "proxy", target=_parse_proxy_target(rest[1]))
        elif len(rest) == 1:
            profile.bindings[key] = PortBinding("script", command=rest[0])
        else:
            raise ConfigError(f"unrecognized port action {rest!r}")
    elif verb == "bind":
        profile_of(words[2])
        config.binds.append((words[1], words[2]))
    else:
        raise ConfigError(f"unknown directive {verb!r}")


class HoneyNode:
    """One bound decoy address answering probes and connections."""

    def __init__(self, ip: str, profile: HoneyProfile,
                 personality: Personality | None, rng: Random | None = None,
                 script_dir: str | Path | None = None) -> None:
        self.ip = ip
        self.profile = profile
        self.personality = personality
        self.rng = rng or Random(0)
        self.script_dir = Path(script_dir) if script_dir else None
        if personality is not None:
            self.tcp_fields = personality.syn_ack_fields()
        else:
            self.tcp_fields = dict(HOST_TCP_FIELDS)

    def _dropped(self) -> bool:
        rate = self.profile.droprate
        if rate <= 0:
            return False
        return self.rng.random() * 100.0 < rate

    def tcp_reply(self, state: str, port: int) -> tuple[str, dict | None]:
        """Answer one TCP probe; every (state, class) pair has its own arm."""
        binding = self.profile.bindings.get(("tcp", port))
        default = self.profile.defaults["tcp"]
        if state == "LISTEN":
            if binding is not None:
                return "open", self.tcp_fields
            elif default == "open":
                return "open", self.tcp_fields
            elif default == "filtered":
                return "filtered", None
            elif default in ("block", "reset"):
                return "closed", None
            else:
                raise ConfigError(f"unknown default action {default!r}")
        elif state == "SYN_RECEIVED":
            # a retransmitted SYN on a half-open port re-acknowledges;
            # anything not half-open answers as if newly probed
            if binding is not None or default == "open":
                return "open", self.tcp_fields
            elif default == "filtered":
                return "filtered", None
            elif default in ("block", "reset"):
                return "closed", None
            else:
                raise ConfigError(f"unknown default action {default!r}")
        else:
            raise ValueError(f"unhandled TCP state {state!r}")

    def tcp_probe(self, port: int) -> tuple[str, dict | None]:
        if self._dropped():
            return "filtered", None
        return self.tcp_reply("LISTEN", port)

    def udp_probe(self, port: int, payload: bytes) -> tuple[str, bytes | None]:
        if self._dropped():
            return "silent", None
        binding = self.profile.bindings.get(("udp", port))
        if binding is None:
            if self.profile.defaults["udp"] == "open":
                return "respond", b""
            return "silent", None
        if binding.kind == "open":
            return "respond", b""
        if binding.kind == "script":
            return "respond", self._run_udp_script(binding.command, payload)
        return "silent", None

    def icmp_probe(self) -> bool:
        if self._dropped():
            return False
        return self.profile.defaults["icmp"] == "open"

    def tcp_service(self, port: int) -> Service | None:
        binding = self.profile.bindings.get(("tcp", port))
        if binding is None:
            if self.profile.defaults["tcp"] == "open":
                return _AcceptingService(self.tcp_fields)
            return None
        if binding.kind == "open":
            return _AcceptingService(self.tcp_fields)
        if binding.kind == "script":
            return _ScriptService(binding.command, self.script_dir,
                                  self.tcp_fields)
        return _ProxyService(binding.target, self.tcp_fields)

    def _run_udp_script(self, command: str, payload: bytes) -> bytes:
        tokens = shlex.split(command)
        try:
            done = subprocess.run(
                tokens, input=payload, capture_output=True,
                timeout=SCRIPT_SPAWN_WAIT,
                cwd=self.script_dir if self.script_dir else None)
        except (OSError, subprocess.TimeoutExpired):
            return b""
        return done.stdout


class _AcceptingService(Service):
    """Accepts the connection and says nothing."""

    def __init__(self, tcp_fields: dict) -> None:
        self.tcp_fields = tcp_fields


def _substitute(tokens: list[str], conn: Connection) -> list[str]:
    mapping = {"$ipsrc": conn.client[0], "$sport": str(conn.client[1]),
               "$ipdst": conn.server[0], "$dport": str(conn.server[1])}
    return [mapping.get(tok, tok) for tok in tokens]


def _read_available(proc: subprocess.Popen) -> bytes:
    """Collect stdout until the process goes quiet or the bound expires."""
    out = bytearray()
    deadline = time.monotonic() + SCRIPT_SPAWN_WAIT
    quiet_until = time.monotonic() + SCRIPT_QUIET_WINDOW
    fd = proc.stdout.fileno()
    while time.monotonic() < deadline:
        wait = min(quiet_until, deadline) - time.monotonic()
        if wait <= 0:
            break
        ready, _, _ = select.select([fd], [], [], wait)
        if not ready:
            if out or proc.poll() is not None:
                break
            continue
        chunk = proc.stdout.read1(4096)
        if not chunk:
            break
        out += chunk
        quiet_until = time.monotonic() + SCRIPT_QUIET_WINDOW
    return bytes(out)


class _ScriptService(Service):
    """Spawns the configured handler per connection and pipes bytes to it."""

    def __init__(self, command: str, script_dir: Path | None,
                 tcp_fields: dict) -> None:
        self.command = command
        self.script_dir = script_dir
        self.tcp_fields = tcp_fields
        self._procs: dict[int, subprocess.Popen] = {}

    def on_connect(self, conn: Connection, t: float) -> None:
        tokens = _substitute(shlex.split(self.command), conn)
        try:
            proc = subprocess.Popen(
                tokens, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                cwd=self.script_dir if self.script_dir else None)
        except OSError:
            conn.close()
            return
        self._procs[id(conn)] = proc
        banner = _read_available(proc)
        if banner:
            conn.reply(banner)

    def on_data(self, conn: Connection, data: bytes, t: float) -> None:
        proc = self._procs.get(id(conn))
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.write(data)
            proc.stdin.flush()
        except (BrokenPipeError, OSError):
            return
        answer = _read_available(proc)
        if answer:
            conn.reply(answer)

    def on_close(self, conn: Connection, t: float) -> None:
        proc = self._procs.pop(id(conn), None)
        if proc is not None and proc.poll() is None:
            proc.kill()
            proc.wait()


class _ProxyService(Service):
    """Forwards connection bytes to a backend and pipes replies back."""

    def __init__(self, target: tuple[str, int], tcp_fields: dict) -> None:
        self.target = target
        self.tcp_fields = tcp_fields
        self._backends: dict[int, Connection] = {}

    def on_connect(self, conn: Connection, t: float) -> None:
        backend = conn.net.connect_internal(conn.server[0], *self.target)
        if backend is None:
            conn.close()
            return
        backend.sink = conn.reply
        self._backends[id(conn)] = backend

    def on_data(self, conn: Connection, data: bytes, t: float) -> None:
        backend = self._backends.get(id(conn))
        if backend is not None:
            conn.net.internal_send(backend, data)

    def on_close(self, conn: Connection, t: float) -> None:
        backend = self._backends.pop(id(conn), None)
        if backend is not None:
            backend.close()
