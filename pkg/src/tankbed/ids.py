"""Signature-based intrusion detection over the packet fabric.

Parses a snort-style rule subset (content anchors, byte tests and jumps,
size checks, per-source rate thresholds, activate/dynamic chaining) and
evaluates packets against the rules in file order.  Address variables such
as $MODBUS_CLIENT are bound to address sets when the rules are parsed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable

from .netsim import AddressSet, Packet

ACTIONS = ("alert", "log", "pass", "drop", "reject", "sdrop", "activate", "dynamic")
PROTOCOLS = ("tcp", "udp", "icmp", "ip")
BLOCKING_ACTIONS = ("drop", "sdrop", "reject")


class RuleError(ValueError):
    """A rule line that does not fit the supported grammar."""


@dataclass(frozen=True)
class AddressMatch:
    """One side of a rule header: an address set, possibly negated."""
    addrs: AddressSet | None  # None means "any"
    negated: bool = False

    def matches(self, ip: str) -> bool:
        if self.addrs is None:
            return not self.negated
        return (ip in self.addrs) != self.negated


@dataclass(frozen=True)
class FlowSpec:
    direction: str | None  # "from_client" | "from_server" | None
    established: bool


@dataclass(frozen=True)
class ContentMatch:
    pattern: bytes
    offset: int = 0
    depth: int | None = None


@dataclass(frozen=True)
class ByteTest:
    nbytes: int
    op: str
    value: int
    offset: int


@dataclass(frozen=True)
class ByteJump:
    nbytes: int
    offset: int


@dataclass(frozen=True)
class IsDataAt:
    pos: int
    relative: bool


@dataclass(frozen=True)
class Dsize:
    op: str
    value: int


@dataclass(frozen=True)
class BytePredicate:
    """Structured reading of the pcre-style options.

    Skips `skip` bytes from the anchor, then either requires the next byte
    to be in `byte_set` or requires the next bytes to differ from
    `not_word`.  With `relative` the anchor is the end of the previous
    content match, otherwise the payload start.
    """
    skip: int
    byte_set: frozenset[int] | None = None
    not_word: bytes | None = None
    relative: bool = True


@dataclass(frozen=True)
class RateFilter:
    kind: str  # "threshold" | "detection_filter"
    count: int
    seconds: float


@dataclass
class Rule:
    action: str
    proto: str
    src: AddressMatch
    src_port: int | None
    dst: AddressMatch
    dst_port: int | None
    bidirectional: bool
    flow: FlowSpec | None = None
    payload_checks: list = field(default_factory=list)
    rate: RateFilter | None = None
    msg: str = ""
    sid: int = 0
    rev: int = 1
    priority: int | None = None
    classtype: str | None = None
    references: list[str] = field(default_factory=list)
    resp: str | None = None
    activates: int | None = None
    activated_by: int | None = None
    window_seconds: float | None = None


@dataclass(frozen=True)
class AlertEvent:
    ts: float
    sid: int
    rev: int
    msg: str
    proto: str
    src: str
    sport: int
    dst: str
    dport: int
    action: str
    resp: str | None
    packet: Packet

    @property
    def line(self) -> str:
        stamp = datetime.fromtimestamp(self.ts, timezone.utc)
        return "{} [sid:{}:{}] {} {{{}}} {} -> {}".format(
            stamp.isoformat(timespec="microseconds"), self.sid, self.rev,
            self.msg, self.proto.upper(), self.src, self.dst)


def _split_options(body: str) -> list[str]:
    """Split the body of a rule on semicolons, ignoring quoted ones."""
    parts = []
    current = []
    in_quote = False
    for ch in body:
        if ch == '"':
            in_quote = not in_quote
            current.append(ch)
        elif ch == ";" and not in_quote:
            parts.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    tail = "".join(current).strip()
    if tail:
        parts.append(tail)
    return [p for p in parts if p]


def _parse_int(text: str) -> int:
    text = text.strip()
    try:
        return int(text, 16) if text.lower().startswith("0x") else int(text)
    except ValueError:
        raise RuleError(f"malformed number {text!r}") from None


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == '"' and value[-1] == '"':
        return value[1:-1]
    return value


_HEX_BODY = re.compile(r"^[0-9A-Fa-f ]+$")


def _content_bytes(value: str) -> bytes:
    """Decode a content string: |hex| pipes or bare hex pairs, else ASCII."""
    text = _unquote(value)
    stripped = text.replace("|", " ").strip()
    if _HEX_BODY.match(stripped):
        pairs = stripped.split()
        if all(len(p) == 2 for p in pairs):
            return bytes(int(p, 16) for p in pairs)
    return text.encode("latin-1")


_PCRE_SKIP = re.compile(r"^\[\\?S\\s\]\{(\d+)\}")
_PCRE_BYTE = re.compile(r"\\?x([0-9A-Fa-f]{2})")


def _parse_pcre(value: str) -> BytePredicate:
    text = _unquote(value)
    if not text.startswith("/"):
        raise RuleError(f"pcre pattern must start with '/': {text!r}")
    body, _, mods = text[1:].rpartition("/")
    relative = "R" in mods
    m = _PCRE_SKIP.match(body)
    if not m:
        raise RuleError(f"unsupported pcre pattern {text!r}")
    skip = int(m.group(1))
    rest = body[m.end():]
    if rest.startswith("(?!"):
        word = bytes(int(h, 16) for h in _PCRE_BYTE.findall(rest))
        if not word:
            raise RuleError(f"empty lookahead in pcre {text!r}")
        return BytePredicate(skip, not_word=word, relative=relative)
    if rest.startswith("("):
        codes = frozenset(int(h, 16) for h in _PCRE_BYTE.findall(rest))
        if not codes:
            raise RuleError(f"empty alternation in pcre {text!r}")
        return BytePredicate(skip, byte_set=codes, relative=relative)
    raise RuleError(f"unsupported pcre pattern {text!r}")


def _parse_rate(kind: str, value: str) -> RateFilter:
    count = seconds = None
    for chunk in value.split(","):
        words = chunk.split()
        if not words:
            continue
        if words[0] == "type":
            if kind != "threshold" or words[1:] != ["threshold"]:
                raise RuleError(f"unsupported {kind} type {chunk!r}")
        elif words[0] == "track":
            if words[1:] != ["by_src"]:
                raise RuleError(f"unsupported track {chunk!r}")
        elif words[0] == "count":
            count = _parse_int(words[1])
        elif words[0] == "seconds":
            seconds = float(_parse_int(words[1]))
        else:
            raise RuleError(f"unknown {kind} field {chunk!r}")
    if count is None or seconds is None:
        raise RuleError(f"{kind} needs count and seconds")
    return RateFilter(kind, count, seconds)


def _parse_address(token: str, variables: dict[str, AddressSet]) -> AddressMatch:
    token = token.replace("\\$", "$")
    negated = token.startswith("!")
    if negated:
        token = token[1:]
    if token == "any":
        return AddressMatch(None, negated)
    if token.startswith("$"):
        name = token[1:]
        if name not in variables:
            raise RuleError(f"unknown variable ${name}")
        return AddressMatch(variables[name], negated)
    return AddressMatch(AddressSet([token]), negated)


def _parse_port(token: str) -> int | None:
    if token == "any":
        return None
    return _parse_int(token)


_HEADER = re.compile(
    r"^(\w+)\s+(\w+)\s+(\S+)\s+(\S+)\s+(->|<>)\s+(\S+)\s+(\S+)\s*\((.*)\)\s*$",
    re.DOTALL)


def parse_rule(text: str, variables: dict[str, AddressSet]) -> Rule:
    m = _HEADER.match(text.strip())
    if not m:
        raise RuleError(f"unparseable rule header: {text[:60]!r}")
    action, proto, src, sport, arrow, dst, dport, body = m.groups()
    if action not in ACTIONS:
        raise RuleError(f"unknown action {action!r}")
    if proto not in PROTOCOLS:
        raise RuleError(f"unknown protocol {proto!r}")
    rule = Rule(
        action=action,
        proto=proto,
        src=_parse_address(src, variables),
        src_port=_parse_port(sport),
        dst=_parse_address(dst, variables),
        dst_port=_parse_port(dport),
        bidirectional=(arrow == "<>"),
    )
    for option in _split_options(body):
        name, colon, value = option.partition(":")
        name = name.strip()
        value = value.strip()
        if not colon:
            raise RuleError(f"option without value: {option!r}")
        if name == "flow":
            direction = None
            established = False
            for word in (w.strip() for w in value.split(",")):
                if word in ("from_client", "from_server"):
                    direction = word
                elif word == "established":
                    established = True
                else:
                    raise RuleError(f"unknown flow keyword {word!r}")
            rule.flow = FlowSpec(direction, established)
        elif name == "content":
            rule.payload_checks.append(ContentMatch(_content_bytes(value)))
        elif name in ("offset", "depth"):
            if not rule.payload_checks or not isinstance(rule.payload_checks[-1], ContentMatch):
                raise RuleError(f"{name} with no preceding content")
            last = rule.payload_checks[-1]
            if name == "offset":
                last = ContentMatch(last.pattern, _parse_int(value), last.depth)
            else:
                last = ContentMatch(last.pattern, last.offset, _parse_int(value))
            rule.payload_checks[-1] = last
        elif name == "pcre":
            rule.payload_checks.append(_parse_pcre(value))
        elif name == "dsize":
            dm = re.match(r"^([<>]?=?)\s*(\d+)$", value)
            if not dm:
                raise RuleError(f"malformed dsize {value!r}")
            rule.payload_checks.append(Dsize(dm.group(1) or "=", int(dm.group(2))))
        elif name == "byte_test":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 4:
                raise RuleError(f"byte_test needs 4 fields: {value!r}")
            rule.payload_checks.append(ByteTest(
                _parse_int(parts[0]), parts[1], _parse_int(parts[2]),
                _parse_int(parts[3])))
        elif name == "byte_jump":
            parts = [p.strip() for p in value.split(",")]
            if len(parts) != 2:
                raise RuleError(f"byte_jump needs 2 fields: {value!r}")
            rule.payload_checks.append(ByteJump(_parse_int(parts[0]), _parse_int(parts[1])))
        elif name == "isdataat":
            parts = [p.strip() for p in value.split(",")]
            relative = len(parts) > 1 and parts[1] == "relative"
            rule.payload_checks.append(IsDataAt(_parse_int(parts[0]), relative))
        elif name in ("threshold", "detection_filter"):
            if rule.rate is not None:
                raise RuleError("rule has two rate filters")
            rule.rate = _parse_rate(name, value)
        elif name == "msg":
            rule.msg = _unquote(value)
        elif name == "reference":
            rule.references.append(value)
        elif name == "classtype":
            rule.classtype = value
        elif name == "priority":
            rule.priority = _parse_int(value)
        elif name == "sid":
            rule.sid = _parse_int(value)
        elif name == "rev":
            rule.rev = _parse_int(value)
        elif name == "resp":
            if value != "reset_both":
                raise RuleError(f"unsupported resp {value!r}")
            rule.resp = value
        elif name == "activates":
            rule.activates = _parse_int(value)
        elif name == "activated_by":
            rule.activated_by = _parse_int(value)
        elif name == "seconds":
            rule.window_seconds = float(_parse_int(value))
        else:
            raise RuleError(f"unknown option {name!r}")
    if rule.action == "activate" and rule.activates is None:
        raise RuleError("activate rule without activates group")
    if rule.action == "dynamic":
        if rule.activated_by is None:
            raise RuleError("dynamic rule without activated_by group")
        if rule.window_seconds is None:
            raise RuleError("dynamic rule without seconds window")
    return rule


def parse_rules(text: str, variables: dict[str, AddressSet]) -> list[Rule]:
    rules = []
    seen = set()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rule = parse_rule(line, variables)
        if rule.sid:
            if rule.sid in seen:
                raise RuleError(f"duplicate sid {rule.sid}")
            seen.add(rule.sid)
        rules.append(rule)
    return rules


def link_activation(rules: Iterable[Rule]) -> list[Rule]:
    """Check that every dynamic rule has a matching activate rule."""
    rules = list(rules)
    groups = {r.activates for r in rules if r.action == "activate"}
    for rule in rules:
        if rule.action == "dynamic" and rule.activated_by not in groups:
            raise RuleError(
                f"dynamic rule sid {rule.sid} waits on group "
                f"{rule.activated_by} that no activate rule provides")
    return rules


def _compare(left: int, op: str, right: int) -> bool:
    if op == ">":
        return left > right
    if op == ">=":
        return left >= right
    if op == "<":
        return left < right
    if op == "<=":
        return left <= right
    if op in ("=", "=="):
        return left == right
    if op == "!=":
        return left != right
    raise RuleError(f"unknown comparison {op!r}")


def _payload_matches(checks: list, payload: bytes) -> bool:
    cursor = 0
    for check in checks:
        if isinstance(check, ContentMatch):
            end = None if check.depth is None else check.offset + check.depth
            idx = payload.find(check.pattern, check.offset, end)
            if idx < 0:
                return False
            cursor = idx + len(check.pattern)
        elif isinstance(check, BytePredicate):
            pos = (cursor if check.relative else 0) + check.skip
            if check.byte_set is not None:
                if pos >= len(payload) or payload[pos] not in check.byte_set:
                    return False
                cursor = pos + 1
            else:
                width = len(check.not_word)
                if len(payload) < pos:
                    return False
                if payload[pos:pos + width] == check.not_word:
                    return False
                cursor = pos + width
        elif isinstance(check, ByteTest):
            chunk = payload[check.offset:check.offset + check.nbytes]
            if len(chunk) != check.nbytes:
                return False
            if not _compare(int.from_bytes(chunk, "big"), check.op, check.value):
                return False
        elif isinstance(check, ByteJump):
            chunk = payload[check.offset:check.offset + check.nbytes]
            if len(chunk) != check.nbytes:
                return False
            cursor = check.offset + check.nbytes + int.from_bytes(chunk, "big")
        elif isinstance(check, IsDataAt):
            target = (cursor if check.relative else 0) + check.pos
            if target >= len(payload):
                return False
        elif isinstance(check, Dsize):
            if not _compare(len(payload), check.op, check.value):
                return False
        else:
            raise RuleError(f"unhandled check {check!r}")
    return True


class Engine:
    """Evaluates packets against a ruleset in file order.

    Keeps per-(sid, source) sliding windows for rate filters and the
    activation times of dynamic-rule groups.  All timing comes from packet
    timestamps, so identical streams produce identical alerts.
    """

    def __init__(self, rules: Iterable[Rule]):
        self.rules = link_activation(rules)
        self.events: list[AlertEvent] = []
        self._windows: dict[tuple[int, str], list[float]] = {}
        self._activated_at: dict[int, float] = {}

    def alert_lines(self) -> list[str]:
        return [e.line for e in self.events]

    def _rate_allows(self, rule: Rule, src: str, now: float) -> bool:
        window = self._windows.setdefault((rule.sid, src), [])
        window.append(now)
        window[:] = [t for t in window if now - t <= rule.rate.seconds]
        if len(window) >= rule.rate.count:
            if rule.rate.kind == "threshold":
                window.clear()
            return True
        return False

    def _direction_matches(self, rule: Rule, pkt: Packet) -> bool:
        forward = (rule.src.matches(pkt.src)
                   and (rule.src_port is None or rule.src_port == pkt.sport)
                   and rule.dst.matches(pkt.dst)
                   and (rule.dst_port is None or rule.dst_port == pkt.dport))
        if forward:
            return True
        if not rule.bidirectional:
            return False
        return (rule.src.matches(pkt.dst)
                and (rule.src_port is None or rule.src_port == pkt.dport)
                and rule.dst.matches(pkt.src)
                and (rule.dst_port is None or rule.dst_port == pkt.sport))

    def _rule_matches(self, rule: Rule, pkt: Packet) -> bool:
        if rule.proto != "ip" and rule.proto != pkt.proto:
            return False
        if not self._direction_matches(rule, pkt):
            return False
        if rule.flow is not None:
            if rule.flow.established and not pkt.established:
                return False
            if rule.flow.direction == "from_client" and not pkt.from_client:
                return False
            if rule.flow.direction == "from_server" and pkt.from_client:
                return False
        if not _payload_matches(rule.payload_checks, pkt.payload):
            return False
        if rule.rate is not None and not self._rate_allows(rule, pkt.src, pkt.ts):
            return False
        return True

    def inspect(self, pkt: Packet, direction: str | None = None) -> list[AlertEvent]:
        del direction  # rules carry their own address constraints
        fired: list[AlertEvent] = []
        for rule in self.rules:
            if rule.action == "dynamic":
                activated = self._activated_at.get(rule.activated_by)
                if activated is None or pkt.ts - activated > rule.window_seconds:
                    continue
            if not self._rule_matches(rule, pkt):
                continue
            if rule.action == "pass":
                break
            if rule.action == "activate":
                # arms the group silently; only the dynamic rule alerts
                self._activated_at[rule.activates] = pkt.ts
                continue
            event = AlertEvent(
                ts=pkt.ts, sid=rule.sid, rev=rule.rev, msg=rule.msg,
                proto=pkt.proto, src=pkt.src, sport=pkt.sport,
                dst=pkt.dst, dport=pkt.dport, action=rule.action,
                resp=rule.resp, packet=pkt)
            fired.append(event)
            if rule.action != "sdrop":
                self.events.append(event)
        return fired


def load_rules(path_text: str, variables: dict[str, AddressSet]) -> Engine:
    return Engine(parse_rules(path_text, variables))
