"""Virtual clock and a minimal discrete-event scheduler.

Events at equal times run in the order they were scheduled, which is what
makes a run replayable: the only sources of ordering are event times and
insertion order, never thread timing.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Callable


class VirtualClock:
    """Millisecond clock that only moves when the scheduler advances it."""

    def __init__(self, start_ms: float = 0.0):
        self.now_ms = float(start_ms)

    def __call__(self) -> float:
        return self.now_ms

    def advance_to(self, t_ms: float) -> None:
        if t_ms < self.now_ms:
            raise ValueError(f"cannot move clock back from {self.now_ms} to {t_ms}")
        self.now_ms = float(t_ms)


class EventScheduler:
    def __init__(self, clock: VirtualClock | None = None):
        self.clock = clock or VirtualClock()
        self._queue: list = []
        self._seq = itertools.count()

    def at(self, t_ms: float, fn: Callable[[], None]) -> None:
        if t_ms < self.clock.now_ms:
            raise ValueError("cannot schedule an event in the past")
        heapq.heappush(self._queue, (float(t_ms), next(self._seq), fn))

    def after(self, delay_ms: float, fn: Callable[[], None]) -> None:
        self.at(self.clock.now_ms + delay_ms, fn)

    def run(self, until_ms: float = float("inf")) -> int:
        """Run events with time <= ``until_ms``; returns how many ran."""
        n = 0
        while self._queue and self._queue[0][0] <= until_ms:
            t, _, fn = heapq.heappop(self._queue)
            self.clock.advance_to(t)
            fn()
            n += 1
        return n

    def __len__(self) -> int:
        return len(self._queue)
