"""Millisecond clocks: wall time for deployments and a settable one for tests."""

from __future__ import annotations

import threading
import time


class SystemClock:
    def now_ms(self) -> int:
        return time.time_ns() // 1_000_000


class LogicalClock:
    """A clock that only moves when told to."""

    def __init__(self, start_ms: int = 1_700_000_000_000) -> None:
        self._now = start_ms
        self._lock = threading.Lock()

    def now_ms(self) -> int:
        return self._now

    def advance(self, ms: int) -> int:
        with self._lock:
            self._now += ms
            return self._now

    def set(self, ms: int) -> None:
        with self._lock:
            self._now = ms


def is_fresh(now_ms: int, ts_ms: int, delta_ms: int) -> bool:
    """Accept iff 0 <= now - ts <= delta."""
    return 0 <= now_ms - ts_ms <= delta_ms
