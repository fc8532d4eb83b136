"""Discrete-event simulation kernel.

One scheduler owns the simulated clock; everything that acts over time is
either a plain scheduled callback or a generator process that yields Effect
objects (Sleep, Join, network operations defined elsewhere). Events at equal
timestamps run in scheduling order, which keeps whole runs deterministic.
"""
from __future__ import annotations

import heapq
from typing import Any, Callable, Generator

EVENT_LIMIT = 50_000_000  # hard stop against runaway schedules


class Scheduler:
    """Min-heap event loop over a simulated clock (seconds as float)."""

    def __init__(self, start: float = 0.0) -> None:
        self.now = start
        self._queue: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self._executed = 0

    def at(self, when: float, fn: Callable[[], None]) -> None:
        if when < self.now:
            raise ValueError(f"cannot schedule into the past: {when} < {self.now}")
        self._seq += 1
        heapq.heappush(self._queue, (when, self._seq, fn))

    def after(self, delay: float, fn: Callable[[], None]) -> None:
        self.at(self.now + delay, fn)

    def run_until(self, t_end: float) -> None:
        """Run every event due at or before t_end, then land the clock on it."""
        while self._queue and self._queue[0][0] <= t_end:
            when, _, fn = heapq.heappop(self._queue)
            self.now = when
            self._executed += 1
            if self._executed > EVENT_LIMIT:
                raise RuntimeError("simulation event limit exceeded")
            fn()
        self.now = t_end

    def run_while(self, cond: Callable[[], bool], t_max: float) -> None:
        while cond() and self._queue and self._queue[0][0] <= t_max:
            when, _, fn = heapq.heappop(self._queue)
            self.now = when
            self._executed += 1
            if self._executed > EVENT_LIMIT:
                raise RuntimeError("simulation event limit exceeded")
            fn()

    @property
    def pending(self) -> int:
        return len(self._queue)


class Effect:
    """Something a process can yield; arranges its own resumption."""

    def start(self, sched: Scheduler, proc: "Process") -> None:
        raise NotImplementedError


class Sleep(Effect):
    def __init__(self, delay: float) -> None:
        self.delay = delay

    def start(self, sched: Scheduler, proc: "Process") -> None:
        sched.after(self.delay, lambda: proc.resume(None))


class WaitUntil(Effect):
    def __init__(self, when: float) -> None:
        self.when = when

    def start(self, sched: Scheduler, proc: "Process") -> None:
        sched.at(max(self.when, sched.now), lambda: proc.resume(None))


class Join(Effect):
    """Wait for another process to finish; resumes with its return value."""

    def __init__(self, proc: "Process") -> None:
        self.proc = proc

    def start(self, sched: Scheduler, proc: "Process") -> None:
        if self.proc.done:
            sched.after(0.0, lambda: proc.resume(self.proc.result))
        else:
            self.proc.waiters.append(proc)


class Process:
    """Generator driven by the scheduler; each yield hands over an Effect."""

    def __init__(self, sched: Scheduler, gen: Generator[Effect, Any, Any]) -> None:
        self.sched = sched
        self.gen = gen
        self.done = False
        self.result: Any = None
        self.error: BaseException | None = None
        self.waiters: list[Process] = []

    def resume(self, value: Any) -> None:
        if self.done:
            return
        try:
            effect = self.gen.send(value)
        except StopIteration as stop:
            self._finish(stop.value)
            return
        except BaseException as exc:
            self.error = exc
            self._finish(None)
            raise
        if not isinstance(effect, Effect):
            raise TypeError(f"process yielded {effect!r}, expected an Effect")
        effect.start(self.sched, self)

    def _finish(self, result: Any) -> None:
        self.done = True
        self.result = result
        for waiter in self.waiters:
            res = result
            self.sched.after(0.0, lambda w=waiter, r=res: w.resume(r))
        self.waiters.clear()


def spawn(sched: Scheduler, gen: Generator[Effect, Any, Any]) -> Process:
    proc = Process(sched, gen)
    sched.after(0.0, lambda: proc.resume(None))
    return proc
