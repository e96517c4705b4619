"""Call counters and wall-clock accumulators for the planning statistics."""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from typing import Dict, Iterator


class Profiler:
    """Accumulates call counts and seconds per named section.

    With ``record_timings=False`` only the counts are kept, which keeps the
    emitted statistics reproducible run to run.
    """

    def __init__(self, record_timings: bool = True) -> None:
        self.record_timings = record_timings
        self.counts: Dict[str, int] = defaultdict(int)
        self.seconds: Dict[str, float] = defaultdict(float)

    @contextmanager
    def track(self, section: str) -> Iterator[None]:
        self.counts[section] += 1
        started = time.perf_counter()
        try:
            yield
        finally:
            if self.record_timings:
                self.seconds[section] += time.perf_counter() - started

    def clock(self) -> float:
        return time.perf_counter() if self.record_timings else 0.0

    def as_dict(self) -> Dict[str, Dict[str, float]]:
        sections = sorted(set(self.counts) | set(self.seconds))
        return {name: {"calls": self.counts[name], "seconds": self.seconds[name]} for name in sections}


__all__ = ["Profiler"]
