"""Deterministic discrete-event core: microsecond clock, ordered event queue,
and reproducible per-stream random generators.

All simulated time is an integer count of microseconds (`SimTime`).  Every
protocol duration in the system is an exact microsecond count, so no float
ever enters the scheduler.
"""

from __future__ import annotations

import heapq
from typing import Callable, Optional, TextIO

from .errors import SchedulingError

SimTime = int  # simulated microseconds

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class RngStream:
    """xorshift64* generator seeded through splitmix64.

    The algorithm is spelled out here so results can be reproduced outside
    this package:

    * state0 = splitmix64(splitmix64(seed) XOR splitmix64(stream + 1)),
      replaced by 0x9E3779B97F4A7C15 if zero;
    * each draw: x ^= x >> 12; x ^= x << 25; x ^= x >> 27 (64-bit wrapping),
      output = (x * 0x2545F4914F6CDD1D) mod 2^64.

    Identical (seed, stream) pairs yield identical sequences on every
    platform.  Each (node, purpose) pair gets its own stream so event
    interleaving can never perturb the draws another node sees.
    """

    __slots__ = ("seed", "stream", "_state")

    def __init__(self, seed: int, stream: int = 0):
        self.seed = seed & _MASK64
        self.stream = stream & _MASK64
        state = _splitmix64(_splitmix64(self.seed) ^ _splitmix64(self.stream + 1))
        self._state = state if state != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self._state
        x ^= x >> 12
        x = (x ^ (x << 25)) & _MASK64
        x ^= x >> 27
        self._state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def randrange(self, n: int) -> int:
        """Uniform integer in [0, n), bias-free via rejection sampling."""
        if n <= 0:
            raise ValueError("randrange() bound must be positive")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n


class Event:
    """One queue entry.  (fire_at, seq) is the total processing order."""

    __slots__ = ("fire_at", "seq", "target", "kind", "fn", "cancelled", "fired")

    def __init__(self, fire_at: SimTime, seq: int, target, kind: str, fn: Callable):
        self.fire_at = fire_at
        self.seq = seq
        self.target = target
        self.kind = kind
        self.fn = fn
        self.cancelled = False
        self.fired = False

    def __lt__(self, other: "Event") -> bool:
        if self.fire_at != other.fire_at:
            return self.fire_at < other.fire_at
        return self.seq < other.seq

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Event(t={self.fire_at}, seq={self.seq}, {self.kind}@{self.target})"


class Engine:
    """Single-threaded event loop over a binary heap.

    Ties at equal fire times break by insertion sequence, which keeps runs
    bit-reproducible.  Cancelled events stay in the heap and are skipped
    when popped (lazy deletion).
    """

    __slots__ = ("now", "_heap", "_seq", "_trace")

    def __init__(self, trace: Optional[TextIO] = None):
        self.now: SimTime = 0
        self._heap: list[Event] = []
        self._seq = 0
        self._trace = trace

    def schedule(self, at: SimTime, fn: Callable, target="", kind: str = "") -> Event:
        """Enqueue `fn` to run at absolute time `at`; returns a cancellable handle."""
        if at < self.now:
            raise SchedulingError(
                f"event {kind!r} scheduled at t={at} but clock is already at {self.now}"
            )
        ev = Event(at, self._seq, target, kind, fn)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def schedule_in(self, delay: SimTime, fn: Callable, target="", kind: str = "") -> Event:
        return self.schedule(self.now + delay, fn, target, kind)

    def cancel(self, ev: Event) -> bool:
        """Make a pending event inert.  False if it already fired (or was cancelled)."""
        if ev.fired or ev.cancelled:
            return False
        ev.cancelled = True
        return True

    def run_until(self, end: SimTime) -> int:
        """Process every event with fire_at <= end in (fire_at, seq) order.

        Returns the number of events that actually fired; the clock ends
        exactly at `end` even if the queue drained earlier.
        """
        heap = self._heap
        trace = self._trace
        processed = 0
        while heap and heap[0].fire_at <= end:
            ev = heapq.heappop(heap)
            if ev.cancelled:
                continue
            self.now = ev.fire_at
            ev.fired = True
            if trace is not None:
                trace.write(f"{ev.fire_at},{ev.seq},{ev.target},{ev.kind}\n")
            ev.fn()
            processed += 1
        self.now = end
        return processed
