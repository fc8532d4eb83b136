"""Command-line front ends.

``testbed`` brings the plant up with the HTTP tag service, or runs
catalog scenarios to produce dataset pairs.  ``attack`` drives the
attacker toolkit: scripted scenarios against an in-process plant, or a
modpoll-style one-shot client against any real Modbus TCP endpoint.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import attack as attack_mod
from .attack import SCENARIOS, format_transcript, parse_modpoll, run_modpoll
from .hmi import HmiServer, LockedSlaveFront, WallClockRunner
from .orchestrator import (
    TopologyError,
    dataset_names,
    load_topology,
    run_all,
    run_scenario,
)
from .sim import spawn


def _bundle_line(bundle) -> str:
    expected = "YES" if bundle.expected_alarm else "NO"
    observed = "YES" if bundle.observed_alarm else "NO"
    return (f"{bundle.code:<7} expected={expected:<3} observed={observed:<3} "
            f"verdict={bundle.verdict:<4} frames={bundle.frame_count:>6} "
            f"alerts={bundle.alert_count:>5}  "
            f"{bundle.capture_path.name} {bundle.alert_path.name}")


def _default_static_dir() -> str | None:
    here = Path(__file__).resolve()
    for base in [Path.cwd(), *here.parents]:
        candidate = base / "frontend" / "dist"
        if (candidate / "index.html").is_file():
            return str(candidate)
    return None


# --- testbed ------------------------------------------------------------

def main_testbed(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="testbed",
        description="Two-tank Modbus plant with gateway, IDS, and decoys.")
    sub = parser.add_subparsers(dest="command", required=True)

    up = sub.add_parser("up", help="run the plant and serve the HMI API")
    up.add_argument("--config", help="config directory (defaults to the "
                    "packaged plant)")
    up.add_argument("--port", type=int, default=8421, help="HTTP port")
    up.add_argument("--host", default="127.0.0.1", help="HTTP bind address")
    up.add_argument("--wall-clock", action="store_true", default=True,
                    help="pace the simulation against wall time (default)")
    up.add_argument("--speed", type=float, default=1.0,
                    help="clock multiplier, e.g. 10 for a 10x fast plant")
    up.add_argument("--seed", type=int, default=0)
    up.add_argument("--static", help="directory with the web front end "
                    "(auto-detects frontend/dist)")
    up.add_argument("--modbus-port", type=int,
                    help="also expose the slave on a real TCP port for "
                    "external Modbus clients")

    one = sub.add_parser("run-scenario", help="run one catalog scenario")
    one.add_argument("code", help="scenario code, e.g. CI-03")
    one.add_argument("--config")
    one.add_argument("--seed", type=int, default=0)
    one.add_argument("--rate", type=float, default=1.0)
    one.add_argument("--out", default="datasets", help="output directory")

    allp = sub.add_parser("run-all", help="run every catalog scenario")
    allp.add_argument("--config")
    allp.add_argument("--seed", type=int, default=0)
    allp.add_argument("--rate", type=float, default=1.0)
    allp.add_argument("--out", default="datasets")

    args = parser.parse_args(argv)
    try:
        if args.command == "up":
            return _cmd_up(args)
        if args.command == "run-scenario":
            code = args.code.upper()
            topology = load_topology(args.config, seed=args.seed)
            bundle = run_scenario(topology, code, args.out, rate=args.rate)
            print(_bundle_line(bundle))
            if bundle.note:
                print(f"        note: {bundle.note}")
            return 0 if bundle.verdict == "pass" else 1
        if args.command == "run-all":
            bundles = run_all(args.out, seed=args.seed,
                              config_dir=args.config, rate=args.rate)
            failed = 0
            for bundle in bundles:
                print(_bundle_line(bundle))
                if bundle.code == "CI-06" and bundle.note:
                    print(f"        note: {bundle.note}")
                if bundle.verdict != "pass":
                    failed += 1
            total = len(bundles)
            print(f"{total - failed}/{total} scenarios matched their "
                  "expected alarm column")
            return 0 if failed == 0 else 1
    except (TopologyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


def _cmd_up(args) -> int:
    from .slave import ModbusTcpServer

    topology = load_topology(args.config, seed=args.seed)
    static_dir = args.static or _default_static_dir()
    server = HmiServer(topology, host=args.host, port=args.port,
                       static_dir=static_dir)
    runner = WallClockRunner(topology, speed=args.speed)
    bridge = None
    if args.modbus_port is not None:
        bridge = ModbusTcpServer(LockedSlaveFront(topology),
                                 host=args.host, port=args.modbus_port)
        bridge.start()
        print(f"modbus tcp bridge on {args.host}:{bridge.address[1]}")

    server.start()
    runner.start()
    host, port = server.address[0], server.address[1]
    print(f"plant up: http://{host}:{port}/ "
          f"(tags at /api/tags, speed x{args.speed:g})")
    if static_dir:
        print(f"serving front end from {static_dir}")
    print("press Ctrl+C to stop")
    try:
        import time
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        runner.stop()
        server.stop()
        if bridge is not None:
            bridge.stop()
    return 0


# --- attack -------------------------------------------------------------

def main_attack(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="attack",
        description="Scripted attacker toolkit for the tank plant.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a catalog scenario against an "
                         "in-process plant and write a transcript")
    run.add_argument("code")
    run.add_argument("--target", default=None,
                     help="host:port inside the simulated fabric "
                     "(default: the decoy front)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--rate", type=float, default=1.0)
    run.add_argument("--config")
    run.add_argument("--out", help="transcript path "
                     "(default <CODE>_attack.txt)")

    mp = sub.add_parser("modpoll", help="one-shot Modbus TCP client "
                        "against a real endpoint")
    mp.add_argument("flags", nargs=argparse.REMAINDER,
                    help="modpoll-style flags, e.g. -0 -r 32210 HOST 5")
    mp.add_argument("--polls", type=int, default=1,
                    help="rounds for read commands")

    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_attack_run(args)
    if args.command == "modpoll":
        return _cmd_attack_modpoll(args)
    return 2


def _cmd_attack_run(args) -> int:
    code = args.code.upper()
    if code not in SCENARIOS:
        print(f"error: unknown scenario {code!r} "
              f"(known: {' '.join(sorted(SCENARIOS))})", file=sys.stderr)
        return 2
    target_ip = None
    target_port = 502
    if args.target:
        host, _, port_text = args.target.partition(":")
        target_ip = host or None
        if port_text:
            try:
                target_port = int(port_text)
            except ValueError:
                print(f"error: bad port in {args.target!r}", file=sys.stderr)
                return 2
    try:
        from .orchestrator import load_topology as _load
        topology = _load(args.config, seed=args.seed)
    except TopologyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    topology.start()
    sched = topology.sched
    sched.run_until(0.5)
    env = topology.attack_env(rate=args.rate, target=target_ip,
                              port=target_port)
    scenario = SCENARIOS[code]
    proc = spawn(sched, scenario.build(env))
    deadline = sched.now + 5000.0
    sched.run_while(lambda: not proc.done and sched.now < deadline,
                    t_max=deadline)
    sched.run_until(sched.now + 1.0)

    records = proc.result if proc.done else []
    text = format_transcript(records or [])
    out_path = Path(args.out or f"{code.replace('-', '_')}_attack.txt")
    out_path.write_text(text + ("\n" if text and not text.endswith("\n")
                                else ""))
    tail = text.splitlines()[-5:]
    print(f"{code} against {env.target_ip}:{env.target_port} "
          f"({len(records or [])} exchanges) -> {out_path}")
    for line in tail:
        print(f"  {line}")
    if not proc.done:
        print("warning: scenario hit the time limit", file=sys.stderr)
        return 1
    return 0


def _cmd_attack_modpoll(args) -> int:
    flags = list(args.flags)
    if flags and flags[0] == "--":
        flags = flags[1:]
    try:
        parsed = parse_modpoll(flags)
    except attack_mod.ModpollError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    polls = args.polls if not parsed.single_poll else 1
    try:
        records = run_modpoll(flags, max_polls=polls)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(format_transcript(records))
    return 0


if __name__ == "__main__":
    sys.exit(main_testbed())
