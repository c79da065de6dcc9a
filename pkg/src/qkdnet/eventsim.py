"""Deterministic discrete-event core: simulated clock and seeded randomness.

Everything time- or randomness-dependent in the stack runs on top of this
module so that a run is a pure function of (seed, config, command script).
Real-time operation reuses the same event queue through ``WallClockDriver``.
"""

from __future__ import annotations

import hashlib
import heapq
import itertools
import random
import threading
import time as _time
from typing import Callable, Iterator


def derive_seed(master: int | str, label: str) -> int:
    """Stable 64-bit sub-seed for an independent random stream."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def derive_rng(master: int | str, label: str) -> random.Random:
    return random.Random(derive_seed(master, label))


class EntropyStream:
    """Deterministic byte stream (SHAKE-256 in counter mode).

    Used both as the simulated quantum-key bit source and as the
    entropy-service backend. Streams with distinct labels are independent.
    Output is produced in 64 KiB batches so multi-Mbps key rates stay cheap.
    """

    _BATCH = 65536

    def __init__(self, master: int | str, label: str):
        self._key = hashlib.sha256(f"entropy:{master}:{label}".encode()).digest()
        self._counter = 0
        self._pending = bytearray()

    def take(self, n: int) -> bytes:
        if n < 0:
            raise ValueError("byte count must be non-negative")
        while len(self._pending) < n:
            batch = max(self._BATCH, n - len(self._pending))
            xof = hashlib.shake_256(self._key + self._counter.to_bytes(8, "big"))
            self._counter += 1
            self._pending.extend(xof.digest(batch))
        out = bytes(self._pending[:n])
        del self._pending[:n]
        return out


class _Handle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class EventEngine:
    """Minimal event queue with an explicit simulated clock.

    Events scheduled for the same instant run in scheduling order, which is
    what makes same-seed runs byte-identical.
    """

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._heap: list[tuple[float, int, _Handle, Callable, tuple]] = []
        self._seq = itertools.count()
        self.lock = threading.RLock()  # shared with API threads in live mode

    @property
    def now(self) -> float:
        return self._now

    def call_at(self, when: float, fn: Callable, *args) -> _Handle:
        if when < self._now:
            raise ValueError(f"cannot schedule into the past ({when} < {self._now})")
        handle = _Handle()
        heapq.heappush(self._heap, (float(when), next(self._seq), handle, fn, args))
        return handle

    def call_after(self, delay: float, fn: Callable, *args) -> _Handle:
        return self.call_at(self._now + delay, fn, *args)

    def spawn(self, gen: Iterator[float], delay: float = 0.0) -> _Handle:
        """Drive a generator task; each yielded value is a further delay."""
        handle = _Handle()

        def step():
            if handle.cancelled:
                return
            try:
                pause = next(gen)
            except StopIteration:
                return
            heapq.heappush(
                self._heap, (self._now + float(pause), next(self._seq), handle, step, ())
            )

        self.call_after(delay, step)
        return handle

    def peek_time(self) -> float | None:
        while self._heap and self._heap[0][2].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Execute the next pending event; returns False when idle."""
        while self._heap:
            when, _, handle, fn, args = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            self._now = when
            fn(*args)
            return True
        return False

    def run_until(self, t: float) -> None:
        """Run all events with timestamp <= t, then advance the clock to t."""
        while True:
            nxt = self.peek_time()
            if nxt is None or nxt > t:
                break
            self.step()
        if t > self._now:
            self._now = float(t)

    def run(self, max_events: int = 10_000_000) -> None:
        for _ in range(max_events):
            if not self.step():
                return
        raise RuntimeError("event budget exhausted; runaway schedule?")


class WallClockDriver:
    """Replays the event queue against the wall clock for live service mode."""

    def __init__(self, engine: EventEngine):
        self.engine = engine
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None

    def start(self) -> None:
        self._thread = threading.Thread(target=self._loop, name="sim-clock", daemon=True)
        self._thread.start()

    def stop(self, timeout: float = 5.0) -> None:
        self._stop.set()
        if self._thread:
            self._thread.join(timeout)

    def _loop(self) -> None:
        epoch = _time.monotonic() - self.engine.now
        while not self._stop.is_set():
            with self.engine.lock:
                nxt = self.engine.peek_time()
            now_wall = _time.monotonic() - epoch
            if nxt is None:
                self._stop.wait(0.05)
                continue
            if nxt > now_wall:
                self._stop.wait(min(nxt - now_wall, 0.05))
                continue
            with self.engine.lock:
                self.engine.step()
