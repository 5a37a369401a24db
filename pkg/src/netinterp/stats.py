"""Aggregate statistics over retrieved peer measurements."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence

from netinterp.errors import NetInterpError
from netinterp.kb import HistoricalRecord


class EmptyInput(NetInterpError, ValueError):
    code = "empty_input"


@dataclass(frozen=True)
class ContextStats:
    n: int
    window_descriptor: str = ""
    mean_mbps: float | None = None
    median_mbps: float | None = None
    stddev_mbps: float | None = None
    avg_fetch_time_ms: float | None = None
    percentile_rank_of_current: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "n": self.n,
            "mean_mbps": self.mean_mbps,
            "median_mbps": self.median_mbps,
            "stddev_mbps": self.stddev_mbps,
            "avg_fetch_time_ms": self.avg_fetch_time_ms,
            "percentile_rank_of_current": self.percentile_rank_of_current,
            "window_descriptor": self.window_descriptor,
        }


def percentile_rank(values: Sequence[float], x: float) -> float:
    """Fraction of ``values`` below ``x``, counting ties at half weight."""
    if not values:
        raise EmptyInput("percentile_rank needs at least one value")
    below = sum(1 for v in values if v < x)
    equal = sum(1 for v in values if v == x)
    return (below + 0.5 * equal) / len(values)


def _median(sorted_values: Sequence[float]) -> float:
    n = len(sorted_values)
    mid = n // 2
    if n % 2:
        return sorted_values[mid]
    return (sorted_values[mid - 1] + sorted_values[mid]) / 2


def compute_stats(
    records: Sequence[HistoricalRecord], current_mbps: float, window_descriptor: str = ""
) -> ContextStats:
    """Mean, median, sample stddev, mean fetch time and the current value's rank."""
    if not math.isfinite(current_mbps) or current_mbps < 0:
        raise ValueError("current_mbps must be finite and >= 0")
    values = [r.throughput_mbps for r in records]
    n = len(values)
    if n == 0:
        return ContextStats(n=0, window_descriptor=window_descriptor)

    mean = math.fsum(values) / n
    stddev = None
    if n >= 2:
        stddev = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (n - 1))
    fetch = [r.fetch_time_ms for r in records if r.fetch_time_ms is not None]
    return ContextStats(
        n=n,
        window_descriptor=window_descriptor,
        mean_mbps=mean,
        median_mbps=_median(sorted(values)),
        stddev_mbps=stddev,
        avg_fetch_time_ms=math.fsum(fetch) / len(fetch) if fetch else None,
        percentile_rank_of_current=percentile_rank(values, current_mbps),
    )
