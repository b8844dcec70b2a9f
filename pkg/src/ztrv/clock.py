"""Millisecond clocks: virtual for simulation, wall for live serving."""

from __future__ import annotations

import threading
import time
from enum import Enum

# an arbitrary but fixed origin so virtual-clock runs are reproducible
VIRTUAL_EPOCH_MS = 1_700_000_000_000


class ClockMode(Enum):
    VIRTUAL = "virtual"
    WALL = "wall"


class SimClock:
    """Time source read by issuer, verifier, and registry alike.

    Virtual mode advances only on explicit calls, which lets experiments
    cover multi-minute windows instantly.  Wall mode reads the system
    clock, clamped to be non-decreasing so a step backward (NTP adjust)
    cannot resurrect expired state.
    """

    def __init__(self, mode: ClockMode, start_ms: int = VIRTUAL_EPOCH_MS):
        self.mode = mode
        self._now = start_ms
        self._lock = threading.Lock()

    @classmethod
    def virtual(cls, start_ms: int = VIRTUAL_EPOCH_MS) -> "SimClock":
        return cls(ClockMode.VIRTUAL, start_ms)

    @classmethod
    def wall(cls) -> "SimClock":
        return cls(ClockMode.WALL, time.time_ns() // 1_000_000)

    def now_ms(self) -> int:
        if self.mode is ClockMode.WALL:
            wall = time.time_ns() // 1_000_000
            with self._lock:
                if wall > self._now:
                    self._now = wall
                return self._now
        return self._now

    def advance(self, delta_ms: int) -> int:
        if self.mode is not ClockMode.VIRTUAL:
            raise RuntimeError("only a virtual clock can be advanced")
        if delta_ms < 0:
            raise ValueError("cannot move time backward")
        with self._lock:
            self._now += delta_ms
            return self._now

    def advance_to(self, now_ms: int) -> int:
        if self.mode is not ClockMode.VIRTUAL:
            raise RuntimeError("only a virtual clock can be advanced")
        with self._lock:
            if now_ms < self._now:
                raise ValueError("cannot move time backward")
            self._now = now_ms
            return self._now
