"""Deterministic discrete-event kernel.

A single priority queue keyed by (fire time, insertion sequence) drives the
whole simulation.  Ties on the fire time are delivered in insertion order,
which is what makes runs reproducible: there is no wall clock, no thread,
and no iteration over unordered containers anywhere in the hot path.  Time
is integer milliseconds internally; scheduling accepts seconds in any exact
form (int, float, decimal string, Fraction).

The kernel also owns the append-only trace and the seeded random generator.
Components that need randomness ask for a named sub-stream so that adding a
consumer never perturbs another's draws.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable

from .units import fmt_quantity, millis_to_text, to_millis


class PastTime(Exception):
    """An event or run target lies before the current simulated time."""


@dataclass
class SimEvent:
    """One scheduled occurrence.  `payload` is an opaque zero-argument
    callable into the owning module; the kernel never inspects it."""

    fire_at_ms: int
    seq: int
    kind: str
    payload: Callable[[], None]
    cancelled: bool = False


@dataclass
class TraceEntry:
    time_ms: int
    actor: str
    action: str
    detail: dict[str, Any] = field(default_factory=dict)

    def format(self) -> str:
        kv = " ".join(f"{k}={fmt_quantity(v)}" for k, v in self.detail.items())
        return f"{millis_to_text(self.time_ms)}\t{self.actor}\t{self.action}\t{kv}"


class Kernel:
    """Event queue, clock, trace and RNG root for one simulation."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._now_ms = 0
        self._seq = 0
        self._heap: list[tuple[int, int, SimEvent]] = []
        self.trace: list[TraceEntry] = []

    # -- clock ---------------------------------------------------------

    @property
    def now_ms(self) -> int:
        return self._now_ms

    def now(self) -> Fraction:
        """Current simulated time in seconds."""
        return Fraction(self._now_ms, 1000)

    # -- scheduling ----------------------------------------------------

    def schedule(self, kind: str, payload: Callable[[], None], fire_at) -> SimEvent:
        """Schedule `payload` at absolute time `fire_at` (seconds).

        Events scheduled for the same instant are delivered in the order
        they were scheduled.  Scheduling into the past raises PastTime.
        """
        at_ms = to_millis(fire_at)
        if at_ms < self._now_ms:
            raise PastTime(
                f"cannot schedule {kind} at {millis_to_text(at_ms)}, "
                f"now is {millis_to_text(self._now_ms)}"
            )
        event = SimEvent(at_ms, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, (at_ms, event.seq, event))
        return event

    def schedule_in(self, kind: str, payload: Callable[[], None], delay) -> SimEvent:
        return self.schedule(kind, payload, self.now() + Fraction(to_millis(delay), 1000))

    def cancel(self, event: SimEvent) -> None:
        """Cancelled events are never delivered (lazy removal)."""
        event.cancelled = True

    # -- running -------------------------------------------------------

    def run_until(self, t) -> int:
        """Deliver every pending event with fire time <= t, including any
        inserted during delivery, then advance the clock to t.  Returns the
        number of events delivered."""
        target_ms = to_millis(t)
        if target_ms < self._now_ms:
            raise PastTime(
                f"cannot run back to {millis_to_text(target_ms)}, "
                f"now is {millis_to_text(self._now_ms)}"
            )
        delivered = 0
        while self._heap and self._heap[0][0] <= target_ms:
            at_ms, _seq, event = heapq.heappop(self._heap)
            if event.cancelled:
                continue
            self._now_ms = at_ms
            delivered += 1
            event.payload()
        self._now_ms = target_ms
        return delivered

    def run_to_completion(self) -> int:
        """Drain the queue entirely; the clock ends on the last event."""
        delivered = 0
        while True:
            head = self._next_pending()
            if head is None:
                return delivered
            delivered += self.run_until(Fraction(head, 1000))

    def _next_pending(self) -> int | None:
        while self._heap:
            at_ms, _seq, event = self._heap[0]
            if event.cancelled:
                heapq.heappop(self._heap)
                continue
            return at_ms
        return None

    def pending_count(self) -> int:
        return sum(1 for _, _, e in self._heap if not e.cancelled)

    # -- trace ---------------------------------------------------------

    def emit(self, actor: str, action: str, **detail: Any) -> TraceEntry:
        entry = TraceEntry(self._now_ms, actor, action, detail)
        self.trace.append(entry)
        return entry

    def export_trace(self) -> str:
        return "".join(e.format() + "\n" for e in self.trace)

    # -- randomness ----------------------------------------------------

    def substream(self, name: str) -> random.Random:
        """Named RNG sub-stream, stable for a given (seed, name)."""
        digest = hashlib.blake2b(f"{self.seed}:{name}".encode(), digest_size=8).digest()
        return random.Random(int.from_bytes(digest, "big"))
