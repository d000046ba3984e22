"""Deterministic discrete-event engine.

Events execute in (time, sequence) order; the sequence counter is assigned
at scheduling time, so equal-time events run in the order they were
scheduled. All stochastic choices in a simulation draw from the engine's
single seeded generator, which makes (scenario, seed) fully determine the
event trace.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Callable

from .errors import CausalityViolation, SimulationHalted

EVENT_KINDS = (
    "message-delivery",
    "beacon",
    "md-move",
    "failure",
    "flow-start",
    "flow-end",
    "timer",
)


@dataclass
class EventHandle:
    time: float
    seq: int
    kind: str
    fn: Callable[[], None]
    note: str = ""
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


@dataclass
class EventEngine:
    seed: int = 0
    record_trace: bool = False
    now: float = 0.0
    executed: int = 0
    _seq: int = 0
    _heap: list = field(default_factory=list)
    trace: list[tuple[float, int, str, str]] = field(default_factory=list)

    def __post_init__(self):
        self.rng = random.Random(self.seed)

    def schedule(self, at: float, kind: str, fn: Callable[[], None], note: str = "") -> EventHandle:
        """Enqueue `fn` to run at absolute sim-time `at`."""
        if at < self.now:
            raise CausalityViolation(f"cannot schedule {kind} at {at} < now {self.now}")
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        handle = EventHandle(time=at, seq=self._seq, kind=kind, fn=fn, note=note)
        self._seq += 1
        heapq.heappush(self._heap, (at, handle.seq, handle))
        return handle

    def schedule_in(self, delay: float, kind: str, fn: Callable[[], None], note: str = "") -> EventHandle:
        return self.schedule(self.now + delay, kind, fn, note)

    def run_until(self, t_end: float) -> int:
        """Execute every event with time <= t_end in order; clock ends at t_end."""
        if t_end < self.now:
            raise CausalityViolation(f"cannot run backwards to {t_end} from {self.now}")
        count = 0
        while self._heap and self._heap[0][0] <= t_end:
            _, _, handle = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self.now = handle.time
            if self.record_trace:
                self.trace.append((handle.time, handle.seq, handle.kind, handle.note))
            try:
                handle.fn()
            except Exception as exc:
                raise SimulationHalted(
                    f"handler failed at t={handle.time} ({handle.kind} {handle.note!r}): {exc}",
                    time=handle.time,
                    kind=handle.kind,
                    note=handle.note,
                ) from exc
            count += 1
        self.now = t_end
        self.executed += count
        return count

    def trace_digest(self) -> str:
        """Stable fingerprint of the executed trace (determinism checks)."""
        import hashlib

        h = hashlib.sha256()
        for time_, seq, kind, note in self.trace:
            h.update(f"{time_!r}|{seq}|{kind}|{note}\n".encode())
        return h.hexdigest()
