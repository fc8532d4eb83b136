"""Operator-facing HTTP service.

Serves the tag snapshot, accepts range-checked writes that ride the
master poller's ordered queue, lists recent alarm transitions, and can
host a static single-page front end.  Writes submitted here never touch
plant state directly: they drain inside the coordinator's tick, so the
HTTP thread cannot interleave with a phase half-run.
"""

from __future__ import annotations

import json
import mimetypes
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .table import Space

_LANDING = """<!doctype html>
<title>tank testbed</title>
<h1>tank testbed</h1>
<p>No front end is installed. The JSON API lives at
<a href="/api/tags">/api/tags</a>, <code>POST /api/write</code>,
and <a href="/api/events">/api/events</a>.</p>
"""


class HmiServer:
    """Threaded HTTP server bound to one topology."""

    def __init__(self, topology, host: str = "127.0.0.1", port: int = 0,
                 static_dir: str | Path | None = None) -> None:
        self.topology = topology
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        outer = self

        class Handler(BaseHTTPRequestHandler):
            # Quiet by default; the CLI enables logging when asked.
            def log_message(self, fmt, *args):
                pass

            def _reply(self, status: int, payload: dict) -> None:
                body = json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self) -> None:
                url = urlparse(self.path)
                if url.path == "/api/tags":
                    with outer.topology.lock:
                        snap = outer.topology.coordinator.tag_snapshot()
                    self._reply(200, snap)
                elif url.path == "/api/events":
                    limit = 50
                    qs = parse_qs(url.query)
                    if "limit" in qs:
                        try:
                            limit = max(1, min(1000, int(qs["limit"][0])))
                        except ValueError:
                            pass
                    with outer.topology.lock:
                        events = outer.topology.coordinator.events[-limit:]
                    self._reply(200, {"events": events})
                else:
                    outer._serve_static(self, url.path)

            def do_POST(self) -> None:
                if urlparse(self.path).path != "/api/write":
                    self._reply(404, {"error": "unknown endpoint"})
                    return
                length = int(self.headers.get("Content-Length") or 0)
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except (json.JSONDecodeError, UnicodeDecodeError):
                    self._reply(400, {"error": "body must be JSON"})
                    return
                status, payload = outer.handle_write(body)
                self._reply(status, payload)

        class Server(ThreadingHTTPServer):
            daemon_threads = True

        self.httpd = Server((host, port), Handler)
        self.address = self.httpd.server_address
        self._thread: threading.Thread | None = None

    # -- write path --

    def handle_write(self, body) -> tuple[int, dict]:
        if not isinstance(body, dict):
            return 400, {"error": "body must be a JSON object"}
        name = body.get("tag")
        tags = self.topology.hmi_tags
        if not isinstance(name, str) or name not in tags:
            known = sorted(tags)
            return 404, {"error": f"unknown tag {name!r}", "tags": known}
        tag = tags[name]
        value = body.get("value")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return 400, {"error": "value must be a number"}
        if not tag.lo <= value <= tag.hi:
            return 400, {"error": f"value {value} outside range",
                         "range": [tag.lo, tag.hi]}
        if tag.space is not Space.HOLDING_REGISTER:
            return 400, {"error": f"tag {name} is not writable"}
        raw = tag.raw_for(value)
        top = self.topology
        top.coordinator.submit(
            lambda: top.master.send_write(tag.address, raw))
        return 200, {"ok": True, "tag": name, "value": value}

    # -- static files --

    def _serve_static(self, handler, path: str) -> None:
        if self.static_dir is None:
            if path == "/":
                body = _LANDING.encode()
                handler.send_response(200)
                handler.send_header("Content-Type", "text/html; charset=utf-8")
                handler.send_header("Content-Length", str(len(body)))
                handler.end_headers()
                handler.wfile.write(body)
            else:
                handler._reply(404, {"error": "not found"})
            return
        name = path.lstrip("/") or "index.html"
        target = (self.static_dir / name).resolve()
        if not str(target).startswith(str(self.static_dir)) \
                or not target.is_file():
            handler._reply(404, {"error": "not found"})
            return
        ctype = mimetypes.guess_type(target.name)[0] or "application/octet-stream"
        body = target.read_bytes()
        handler.send_response(200)
        handler.send_header("Content-Type", ctype)
        handler.send_header("Content-Length", str(len(body)))
        handler.end_headers()
        handler.wfile.write(body)

    # -- lifecycle --

    def start(self) -> None:
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


class WallClockRunner:
    """Paces the simulated clock against wall time for interactive use.

    Advances the scheduler in small slices while holding the topology
    lock, so HTTP reads see consistent state between slices.
    """

    def __init__(self, topology, speed: float = 1.0,
                 slice_s: float = 0.05) -> None:
        if speed <= 0:
            raise ValueError("speed must be positive")
        self.topology = topology
        self.speed = speed
        self.slice_s = slice_s
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def _loop(self) -> None:
        top = self.topology
        while not self._stop.is_set():
            with top.lock:
                top.sched.run_until(top.sched.now + self.slice_s * self.speed)
            time.sleep(self.slice_s)

    def start(self) -> None:
        self.topology.start()
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5)


class LockedSlaveFront:
    """Adapter exposing the simulated slave over a real TCP socket while
    the wall-clock runner drives the same state: every frame is handled
    under the topology lock."""

    def __init__(self, topology) -> None:
        self._logic = topology.slave_logic
        self._lock = topology.lock

    def handle_frame(self, data: bytes, t: float):
        with self._lock:
            return self._logic.handle_frame(data, t)
