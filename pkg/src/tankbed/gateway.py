"""Forwarding gateway between the attack and target segments.

Packets crossing segments pass a first-match rule chain modeled on a
bridge-mode firewall: blacklist, whitelist, broadcast accepts, then
per-protocol log+queue rules for new inbound flows, then an unconditional
queue. QUEUE verdicts hand the packet to the inspection engine; in
bypass (ids) mode alerts never block traffic, in inline (ips) mode a
drop/reject match discards the packet, reject additionally synthesizing
reset events toward both ends. Every traversing packet lands in the
capture exactly once, dropped ones included.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .netsim import AddressSet, Packet

ACCEPT = "ACCEPT"
DROP = "DROP"
QUEUE = "QUEUE"

_PROTO_PREFIX = {"tcp": "INBOUND TCP: ", "udp": "INBOUND UDP: ",
                 "icmp": "INBOUND ICMP: "}
_OTHER_PREFIX = "INBOUND OTHER: "


@dataclass
class ChainPolicy:
    blacklist: AddressSet = field(default_factory=AddressSet)
    whitelist: AddressSet = field(default_factory=AddressSet)
    broadcast_accepts: tuple[str, ...] = ("10.0.0.255", "255.255.255.255")


def eval_chain(pkt: Packet, direction: str,
               policy: ChainPolicy) -> tuple[str, str | None]:
    """First-match verdict plus an optional log line."""
    if pkt.src in policy.blacklist:
        return DROP, None
    if pkt.src in policy.whitelist:
        return ACCEPT, None
    if pkt.dst in policy.broadcast_accepts:
        return ACCEPT, None
    if direction == "inbound" and pkt.new_flow:
        prefix = _PROTO_PREFIX.get(pkt.proto, _OTHER_PREFIX)
        line = f"{prefix}{pkt.src}:{pkt.sport} -> {pkt.dst}:{pkt.dport}"
        return QUEUE, line
    # the final unconditional rule; reverse-direction traffic also queues
    return QUEUE, None


class Gateway:
    """The in-process forwarding element netsim.Network consults."""

    def __init__(self, policy: ChainPolicy | None = None, inspector=None,
                 mode: str = "ids") -> None:
        if mode not in ("ids", "ips"):
            raise ValueError(f"mode must be ids or ips, not {mode!r}")
        self.policy = policy or ChainPolicy()
        self.inspector = inspector
        self.mode = mode
        self.capture: list[Packet] = []
        self.verdicts: list[str] = []
        self.log: list[tuple[float, str]] = []

    def process(self, pkt: Packet, direction: str) -> bool:
        verdict, line = eval_chain(pkt, direction, self.policy)
        if line is not None:
            self.log.append((pkt.ts, line))
        self.capture.append(pkt)
        self.verdicts.append(verdict)
        if verdict == DROP:
            return False
        if verdict == QUEUE and self.inspector is not None:
            alerts = self.inspector.inspect(pkt, direction)
            if self.mode == "ips":
                for alert in alerts:
                    resets = (alert.action == "reject"
                              or getattr(alert, "resp", None) == "reset_both")
                    if alert.action in ("drop", "sdrop", "reject") or resets:
                        if resets:
                            self._synthesize_resets(pkt)
                        return False
        return True

    def _synthesize_resets(self, pkt: Packet) -> None:
        for src, sport, dst, dport, from_client in (
                (pkt.dst, pkt.dport, pkt.src, pkt.sport, not pkt.from_client),
                (pkt.src, pkt.sport, pkt.dst, pkt.dport, pkt.from_client)):
            reset = Packet(pkt.ts, src, sport, dst, dport, "tcp", b"", "rst",
                           new_flow=False, from_client=from_client)
            self.capture.append(reset)
            self.verdicts.append(ACCEPT)

    def capture_slice(self, start: int = 0) -> list[Packet]:
        return self.capture[start:]
