"""Deterministic discrete-event core.

Single-threaded scheduler over the integer tick timeline plus labeled,
seed-derived random streams. Events that fire at the same tick dispatch in
insertion order, and the same (root_seed, label) pair always reproduces the
same draw sequence, so a full run is a pure function of (config, seed).
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .errors import PastEventError, TickOverflowError
from .timebase import UINT64_MAX


@dataclass
class Event:
    """A scheduled occurrence on the simulated timeline.

    ``sequence`` is assigned by the scheduler and doubles as the event id;
    ``cancelled`` is a tombstone flag (cancelled events are skipped, not
    removed from the queue).
    """

    fire_at: int
    target: str = ""
    kind: str = ""
    callback: Optional[Callable[["Simulator", "Event"], None]] = None
    payload: Any = None
    sequence: int = -1
    cancelled: bool = False


class Simulator:
    """Event loop with FIFO tie-breaking and a monotone integer clock."""

    def __init__(self, trace: bool = False):
        self._now = 0
        self._next_seq = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._events: dict[int, Event] = {}
        self.trace: list[tuple[int, int, str, str]] | None = [] if trace else None

    @property
    def now(self) -> int:
        return self._now

    def schedule(self, event: Event) -> int:
        if event.fire_at < self._now:
            raise PastEventError(
                f"cannot schedule at {event.fire_at} (now is {self._now})"
            )
        if event.fire_at > UINT64_MAX:
            raise TickOverflowError("event time exceeds the 64-bit tick counter")
        event.sequence = self._next_seq
        self._next_seq += 1
        heapq.heappush(self._heap, (event.fire_at, event.sequence, event))
        self._events[event.sequence] = event
        return event.sequence

    def at(
        self,
        fire_at: int,
        callback: Callable[["Simulator", "Event"], None],
        kind: str = "",
        target: str = "",
        payload: Any = None,
    ) -> int:
        """Convenience wrapper around :meth:`schedule`."""
        return self.schedule(
            Event(fire_at=fire_at, target=target, kind=kind, callback=callback, payload=payload)
        )

    def cancel(self, event_id: int) -> None:
        event = self._events.get(event_id)
        if event is not None:
            event.cancelled = True

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with fire_at <= t_end; leaves now() at t_end."""
        if t_end < self._now:
            raise PastEventError(f"t_end {t_end} is before now {self._now}")
        dispatched = 0
        while self._heap and self._heap[0][0] <= t_end:
            fire_at, seq, event = heapq.heappop(self._heap)
            self._events.pop(seq, None)
            if event.cancelled:
                continue
            self._now = fire_at
            if self.trace is not None:
                self.trace.append((fire_at, seq, event.kind, event.target))
            if event.callback is not None:
                event.callback(self, event)
            dispatched += 1
        self._now = t_end
        return dispatched


def derive_seed(root_seed: int, label: str) -> int:
    """Stable 64-bit sub-seed for (root_seed, label), platform independent."""
    digest = hashlib.sha256(f"{root_seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


@dataclass
class RngStream:
    """Labeled random stream derived from a root seed.

    Distinct labels give statistically independent streams; the same
    (root_seed, label) pair yields an identical sequence on every run.
    """

    root_seed: int
    label: str
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        digest = hashlib.sha256(f"{self.root_seed}/{self.label}".encode()).digest()
        words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]
        self._gen = np.random.default_rng(np.random.SeedSequence(words))

    def random(self) -> float:
        return float(self._gen.random())

    def uniform(self, low: float, high: float) -> float:
        return float(self._gen.uniform(low, high))

    def normal(self, mean: float, sigma: float) -> float:
        return float(self._gen.normal(mean, sigma))

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high) as a plain Python int."""
        return int(self._gen.integers(low, high))

    def gauss_ticks(self, sigma: float) -> int:
        """Zero-mean Gaussian draw rounded to the nearest tick."""
        if sigma == 0:
            return 0
        return round(float(self._gen.normal(0.0, sigma)))


def derive_stream(root_seed: int, label: str) -> RngStream:
    return RngStream(root_seed=root_seed, label=label)
