"""In-process packet fabric.

Hosts, services and honeypot nodes register under (ip, port); client
generator processes talk to them through yieldable effects (probe, open,
request, ping). Traffic between the attack segment and the target segment
crosses the gateway, which can capture, inspect and drop; same-segment
traffic is delivered directly. All delivery happens on the simulation
scheduler, so runs are deterministic end to end.
"""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .sim import Effect, Process, Scheduler

LINK_DELAY = 0.0001      # one-way hop, seconds
PROBE_TIMEOUT = 0.05     # scanner patience for silent ports
REQUEST_TIMEOUT = 1.0

HOST_TCP_FIELDS = {"window": 64240, "options": (("MSS", 1460),), "ttl": 64, "df": True}


class AddressSet:
    """IP addresses and CIDR blocks; `any` matches everything."""

    def __init__(self, items: Iterable[str] | None = None, match_all: bool = False) -> None:
        self.match_all = match_all
        self._hosts: set[str] = set()
        self._nets: list[ipaddress.IPv4Network] = []
        for item in items or []:
            if "/" in item:
                self._nets.append(ipaddress.ip_network(item, strict=False))
            else:
                self._hosts.add(item)

    @classmethod
    def any(cls) -> "AddressSet":
        return cls(match_all=True)

    def __contains__(self, ip: str) -> bool:
        if self.match_all:
            return True
        if ip in self._hosts:
            return True
        if self._nets:
            addr = ipaddress.ip_address(ip)
            return any(addr in net for net in self._nets)
        return False

    def __repr__(self) -> str:
        if self.match_all:
            return "AddressSet(any)"
        return f"AddressSet({sorted(self._hosts)} + {self._nets})"


@dataclass(frozen=True)
class Packet:
    ts: float
    src: str
    sport: int
    dst: str
    dport: int
    proto: str       # tcp | udp | icmp
    payload: bytes
    kind: str        # syn | synack | ack | rst | fin | data | udp | echo | echoreply
    new_flow: bool
    from_client: bool
    # TCP presentation fields for capture realism (SYN-ACKs carry the
    # responder's personality; None falls back to plain-host defaults)
    tcp_window: int | None = None
    tcp_options: tuple = ()
    ip_ttl: int | None = None
    ip_df: bool | None = None

    @property
    def established(self) -> bool:
        return self.kind not in ("syn", "synack")


@dataclass(frozen=True)
class ProbeReply:
    status: str                       # open | closed | filtered
    window: int | None = None
    options: tuple = ()
    ttl: int | None = None
    df: bool | None = None


@dataclass(frozen=True)
class SegmentPlan:
    attack: str = "192.168.100.0/24"
    target: str = "10.0.0.0/24"

    def segment_of(self, ip: str) -> str:
        addr = ipaddress.ip_address(ip)
        if addr in ipaddress.ip_network(self.attack):
            return "attack"
        if addr in ipaddress.ip_network(self.target):
            return "target"
        return "other"


class Service:
    """Connection-oriented endpoint; override what you need."""

    tcp_fields = HOST_TCP_FIELDS

    def on_connect(self, conn: "Connection", t: float) -> None:
        pass

    def on_data(self, conn: "Connection", data: bytes, t: float) -> None:
        pass

    def on_close(self, conn: "Connection", t: float) -> None:
        pass


class Connection:
    _next_id = 1

    def __init__(self, net: "Network", client: tuple[str, int],
                 server: tuple[str, int], service: Service) -> None:
        self.net = net
        self.client = client
        self.server = server
        self.service = service
        self.open = True
        self.id = Connection._next_id
        Connection._next_id += 1
        self.inbox: list[bytes] = []
        self._waiter: tuple[Process, int] | None = None
        self._wait_gen = 0
        self.sink: Callable[[bytes, float], None] | None = None

    def reply(self, data: bytes, at: float | None = None) -> None:
        """Send server -> client; lands in the waiting requester (or inbox)."""
        sched = self.net.sched
        when = max(at if at is not None else sched.now, sched.now)

        def emit() -> None:
            if not self.open:
                return
            if self.sink is not None:
                self.sink(data, sched.now)
                return
            pkt = Packet(sched.now, self.server[0], self.server[1],
                         self.client[0], self.client[1], "tcp", data, "data",
                         new_flow=False, from_client=False)
            if self.net._transmit(pkt):
                self.net.sched.at(sched.now + LINK_DELAY, lambda: self._deliver(data))

        sched.at(when, emit)

    def _deliver(self, data: bytes) -> None:
        if not self.open:
            return
        if self._waiter is not None:
            proc, _ = self._waiter
            self._waiter = None
            proc.resume(data)
        else:
            self.inbox.append(data)

    def close(self) -> None:
        if not self.open:
            return
        self.open = False
        self.net.sched.after(0.0, lambda: self.service.on_close(self, self.net.sched.now))


class Network:
    def __init__(self, sched: Scheduler, plan: SegmentPlan = SegmentPlan(),
                 gateway=None) -> None:
        self.sched = sched
        self.plan = plan
        self.gateway = gateway
        self._services: dict[tuple[str, int, str], Service] = {}
        self._honeypots: dict[str, object] = {}
        self._hosts: set[str] = set()
        self._ephemeral: dict[str, int] = {}

    # --- registration ---

    def add_host(self, ip: str) -> None:
        self._hosts.add(ip)

    def add_service(self, ip: str, port: int, service: Service,
                    proto: str = "tcp") -> None:
        key = (ip, port, proto)
        if key in self._services:
            raise ValueError(f"duplicate binding {ip}:{port}/{proto}")
        self._services[key] = service
        self._hosts.add(ip)

    def bind_honeypot(self, ip: str, node) -> None:
        if ip in self._honeypots or ip in self._hosts:
            raise ValueError(f"duplicate address binding {ip}")
        self._honeypots[ip] = node

    def lookup_service(self, ip: str, port: int, proto: str = "tcp") -> Service | None:
        svc = self._services.get((ip, port, proto))
        if svc is not None:
            return svc
        node = self._honeypots.get(ip)
        if node is not None:
            return node.tcp_service(port) if proto == "tcp" else None
        return None

    def ephemeral_port(self, ip: str) -> int:
        port = self._ephemeral.get(ip, 49152)
        self._ephemeral[ip] = port + 1 if port < 65535 else 49152
        return port

    # --- transmission through (or around) the gateway ---

    def _crosses_gateway(self, src: str, dst: str) -> bool:
        return self.plan.segment_of(src) != self.plan.segment_of(dst)

    def _transmit(self, pkt: Packet) -> bool:
        """Returns whether the packet survives the path."""
        if self.gateway is not None and self._crosses_gateway(pkt.src, pkt.dst):
            direction = "inbound" if self.plan.segment_of(pkt.src) == "attack" else "outbound"
            return self.gateway.process(pkt, direction)
        return True

    # --- behavior resolution for probes ---

    def _tcp_probe_result(self, dst: str, port: int):
        svc = self._services.get((dst, port, "tcp"))
        if svc is not None:
            return "open", svc.tcp_fields
        node = self._honeypots.get(dst)
        if node is not None:
            return node.tcp_probe(port)
        if dst in self._hosts:
            return "closed", None
        return "filtered", None

    def _udp_probe_result(self, dst: str, port: int, payload: bytes):
        svc = self._services.get((dst, port, "udp"))
        if svc is not None:
            return "respond", b""
        node = self._honeypots.get(dst)
        if node is not None:
            return node.udp_probe(port, payload)
        return "silent", None

    def _icmp_probe_result(self, dst: str):
        node = self._honeypots.get(dst)
        if node is not None:
            return node.icmp_probe()
        return dst in self._hosts

    # --- effects for generator processes ---

    def probe(self, src: str, dst: str, port: int) -> "_TcpProbe":
        return _TcpProbe(self, src, dst, port)

    def udp_probe(self, src: str, dst: str, port: int, payload: bytes = b"") -> "_UdpProbe":
        return _UdpProbe(self, src, dst, port, payload)

    def ping(self, src: str, dst: str) -> "_Ping":
        return _Ping(self, src, dst)

    def open(self, src: str, dst: str, port: int,
             timeout: float = PROBE_TIMEOUT) -> "_OpenConnection":
        return _OpenConnection(self, src, dst, port, timeout)

    def request(self, conn: Connection, data: bytes,
                timeout: float = REQUEST_TIMEOUT) -> "_Request":
        return _Request(self, conn, data, timeout)

    def send(self, conn: Connection, data: bytes) -> "_Send":
        return _Send(self, conn, data)

    # --- internal (same-host or proxy backhaul) connections ---

    def connect_internal(self, src_ip: str, dst: str, port: int) -> Connection | None:
        service = self.lookup_service(dst, port)
        if service is None:
            return None
        conn = Connection(self, (src_ip, self.ephemeral_port(src_ip)), (dst, port), service)
        service.on_connect(conn, self.sched.now)
        return conn

    def internal_send(self, conn: Connection, data: bytes) -> None:
        if conn.open:
            self.sched.at(self.sched.now + LINK_DELAY,
                          lambda: conn.service.on_data(conn, data, self.sched.now))


def _mk(net: Network, src, sport, dst, dport, proto, payload, kind,
        new_flow, from_client) -> Packet:
    return Packet(net.sched.now, src, sport, dst, dport, proto, payload, kind,
                  new_flow, from_client)


class _TcpProbe(Effect):
    """Half-open SYN probe: SYN, then SYN-ACK + RST / RST / silence."""

    def __init__(self, net: Network, src: str, dst: str, port: int) -> None:
        self.net, self.src, self.dst, self.port = net, src, dst, port

    def start(self, sched: Scheduler, proc: Process) -> None:
        net, src, dst, port = self.net, self.src, self.dst, self.port
        sport = net.ephemeral_port(src)
        syn = _mk(net, src, sport, dst, port, "tcp", b"", "syn", True, True)
        if not net._transmit(syn):
            sched.after(PROBE_TIMEOUT, lambda: proc.resume(ProbeReply("filtered")))
            return
        status, fields = net._tcp_probe_result(dst, port)
        if status == "open":
            def synack() -> None:
                f = fields or {}
                pkt = Packet(sched.now, dst, port, src, sport, "tcp", b"", "synack",
                             False, False, tcp_window=f.get("window"),
                             tcp_options=tuple(f.get("options") or ()),
                             ip_ttl=f.get("ttl"), ip_df=f.get("df"))
                if net._transmit(pkt):
                    def teardown() -> None:
                        net._transmit(_mk(net, src, sport, dst, port, "tcp", b"",
                                          "rst", False, True))
                        proc.resume(ProbeReply("open", **(fields or {})))
                    sched.after(LINK_DELAY, teardown)
                else:
                    sched.after(PROBE_TIMEOUT, lambda: proc.resume(ProbeReply("filtered")))
            sched.after(LINK_DELAY, synack)
        elif status == "closed":
            def rst() -> None:
                pkt = _mk(net, dst, port, src, sport, "tcp", b"", "rst", False, False)
                ok = net._transmit(pkt)
                sched.after(LINK_DELAY,
                            lambda: proc.resume(ProbeReply("closed" if ok else "filtered")))
            sched.after(LINK_DELAY, rst)
        else:  # filtered or honeypot drop
            sched.after(PROBE_TIMEOUT, lambda: proc.resume(ProbeReply("filtered")))


class _UdpProbe(Effect):
    def __init__(self, net: Network, src: str, dst: str, port: int, payload: bytes) -> None:
        self.net, self.src, self.dst, self.port, self.payload = net, src, dst, port, payload

    def start(self, sched: Scheduler, proc: Process) -> None:
        net, src, dst, port = self.net, self.src, self.dst, self.port
        sport = net.ephemeral_port(src)
        pkt = _mk(net, src, sport, dst, port, "udp", self.payload, "udp", True, True)
        if not net._transmit(pkt):
            sched.after(PROBE_TIMEOUT, lambda: proc.resume(None))
            return
        status, data = net._udp_probe_result(dst, port, self.payload)
        if status == "respond":
            def answer() -> None:
                back = _mk(net, dst, port, src, sport, "udp", data or b"", "udp", False, False)
                if net._transmit(back):
                    sched.after(LINK_DELAY, lambda: proc.resume(data or b""))
                else:
                    sched.after(PROBE_TIMEOUT, lambda: proc.resume(None))
            sched.after(LINK_DELAY, answer)
        else:
            sched.after(PROBE_TIMEOUT, lambda: proc.resume(None))


class _Ping(Effect):
    def __init__(self, net: Network, src: str, dst: str) -> None:
        self.net, self.src, self.dst = net, src, dst

    def start(self, sched: Scheduler, proc: Process) -> None:
        net, src, dst = self.net, self.src, self.dst
        echo = _mk(net, src, 0, dst, 0, "icmp", b"", "echo", True, True)
        if not net._transmit(echo):
            sched.after(PROBE_TIMEOUT, lambda: proc.resume(False))
            return
        if net._icmp_probe_result(dst):
            def answer() -> None:
                back = _mk(net, dst, 0, src, 0, "icmp", b"", "echoreply", False, False)
                ok = net._transmit(back)
                sched.after(LINK_DELAY, lambda: proc.resume(bool(ok)))
            sched.after(LINK_DELAY, answer)
        else:
            sched.after(PROBE_TIMEOUT, lambda: proc.resume(False))


class _OpenConnection(Effect):
    def __init__(self, net: Network, src: str, dst: str, port: int, timeout: float) -> None:
        self.net, self.src, self.dst, self.port, self.timeout = net, src, dst, port, timeout

    def start(self, sched: Scheduler, proc: Process) -> None:
        net, src, dst, port = self.net, self.src, self.dst, self.port
        sport = net.ephemeral_port(src)
        syn = _mk(net, src, sport, dst, port, "tcp", b"", "syn", True, True)
        if not net._transmit(syn):
            sched.after(self.timeout, lambda: proc.resume(None))
            return
        status, fields = net._tcp_probe_result(dst, port)
        service = net.lookup_service(dst, port)
        if status != "open" or service is None:
            sched.after(self.timeout, lambda: proc.resume(None))
            return

        def synack() -> None:
            f = fields or {}
            pkt = Packet(sched.now, dst, port, src, sport, "tcp", b"", "synack",
                         False, False, tcp_window=f.get("window"),
                         tcp_options=tuple(f.get("options") or ()),
                         ip_ttl=f.get("ttl"), ip_df=f.get("df"))
            if not net._transmit(pkt):
                sched.after(self.timeout, lambda: proc.resume(None))
                return

            def complete() -> None:
                net._transmit(_mk(net, src, sport, dst, port, "tcp", b"", "ack", False, True))
                conn = Connection(net, (src, sport), (dst, port), service)
                service.on_connect(conn, sched.now)
                proc.resume(conn)
            sched.after(LINK_DELAY, complete)
        sched.after(LINK_DELAY, synack)


class _Request(Effect):
    def __init__(self, net: Network, conn: Connection, data: bytes, timeout: float) -> None:
        self.net, self.conn, self.data, self.timeout = net, conn, data, timeout

    def start(self, sched: Scheduler, proc: Process) -> None:
        net, conn = self.net, self.conn
        if conn.inbox:
            data = conn.inbox.pop(0)
            sched.after(0.0, lambda: proc.resume(data))
            return
        pkt = _mk(net, conn.client[0], conn.client[1], conn.server[0], conn.server[1],
                  "tcp", self.data, "data", False, True)
        delivered = net._transmit(pkt) and conn.open
        conn._wait_gen += 1
        generation = conn._wait_gen
        conn._waiter = (proc, generation)
        if delivered:
            payload = self.data
            sched.at(sched.now + LINK_DELAY,
                     lambda: conn.service.on_data(conn, payload, sched.now))

        def deadline() -> None:
            if conn._waiter is not None and conn._waiter[1] == generation:
                conn._waiter = None
                proc.resume(None)
        sched.after(self.timeout, deadline)


class _Send(Effect):
    """Fire-and-forget data; resumes immediately after transmission."""

    def __init__(self, net: Network, conn: Connection, data: bytes) -> None:
        self.net, self.conn, self.data = net, conn, data

    def start(self, sched: Scheduler, proc: Process) -> None:
        net, conn = self.net, self.conn
        pkt = _mk(net, conn.client[0], conn.client[1], conn.server[0], conn.server[1],
                  "tcp", self.data, "data", False, True)
        if net._transmit(pkt) and conn.open:
            payload = self.data
            sched.at(sched.now + LINK_DELAY,
                     lambda: conn.service.on_data(conn, payload, sched.now))
        sched.after(0.0, lambda: proc.resume(None))
