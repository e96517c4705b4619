"""Episode metrics and batch aggregation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Dict, Iterable, List, Mapping, Sequence

import numpy as np

from dloplan.errors import AggregationError


logger = logging.getLogger(__name__)

SUCCESS_ERROR = 0.05
TIME_LIMIT = 180.0

_AGGREGATED = (
    "final_error",
    "collision_time",
    "execution_time",
    "replans",
    "planning_time",
    "feasible_length",
    "smoothed_length",
)


@dataclass
class EpisodeMetrics:
    task: str
    mode: str
    seed: int
    segment_count: int
    success: bool
    final_error: float
    collision_time: float
    execution_time: float
    replans: int
    planning_time: float
    feasible_length: float
    smoothed_length: float
    overstretched: bool = False
    cause: str = ""

    def __post_init__(self) -> None:
        for name in _AGGREGATED:
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise AggregationError(f"metric {name} must be finite and non-negative, got {value}")
        if self.success and not is_success(self.final_error, self.execution_time, self.overstretched):
            raise AggregationError("success flag contradicts the error/time/overstretch criteria")

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, payload: Mapping[str, Any]) -> "EpisodeMetrics":
        try:
            known = {name: payload[name] for name in cls.__dataclass_fields__ if name in payload}
            return cls(**known)
        except TypeError as exc:
            raise AggregationError(f"incomplete metrics record: {exc}") from exc


def is_success(final_error: float, execution_time: float, overstretched: bool) -> bool:
    return final_error < SUCCESS_ERROR and execution_time <= TIME_LIMIT and not overstretched


def task_error(reached: np.ndarray, goal: np.ndarray) -> float:
    """Euclidean norm of the stacked feature-point difference."""

    return float(np.linalg.norm(np.asarray(reached) - np.asarray(goal)))


def mean_std(values: Sequence[float]) -> Dict[str, float]:
    """Mean and population standard deviation."""

    array = np.asarray(values, dtype=float)
    return {"mean": float(array.mean()), "std": float(array.std())}


def shortest_fraction_mean(values: Sequence[float], fraction: float = 0.8) -> float:
    """Mean of the smallest ``fraction`` of the values (at least one)."""

    ordered = np.sort(np.asarray(values, dtype=float))
    keep = max(1, int(math.floor(fraction * ordered.size)))
    return float(ordered[:keep].mean())


def aggregate(records: Iterable[EpisodeMetrics]) -> Dict[str, Any]:
    """Per task and mode: success rate and mean +- std of every metric.

    Raises ``AggregationError`` for an empty batch or mixed discretizations.
    """

    records = list(records)
    if not records:
        raise AggregationError("nothing to aggregate")
    counts = {record.segment_count for record in records}
    if len(counts) > 1:
        raise AggregationError(f"logs mix rod discretizations {sorted(counts)}")

    groups: Dict[str, List[EpisodeMetrics]] = {}
    for record in records:
        groups.setdefault(f"{record.task}/{record.mode}", []).append(record)

    table = {}
    for key in sorted(groups):
        group = groups[key]
        successes = [record for record in group if record.success]
        row: Dict[str, Any] = {
            "runs": len(group),
            "successes": len(successes),
            "success_rate": len(successes) / len(group),
        }
        for name in _AGGREGATED:
            row[name] = mean_std([getattr(record, name) for record in group])
        if successes:
            row["final_error_successful"] = mean_std([record.final_error for record in successes])
        row["planning_time_shortest_80"] = shortest_fraction_mean([record.planning_time for record in group])
        causes: Dict[str, int] = {}
        for record in group:
            if record.cause:
                causes[record.cause] = causes.get(record.cause, 0) + 1
        row["failure_causes"] = causes
        table[key] = row
    return {"segment_count": counts.pop(), "groups": table}


def aggregate_planning(records: Iterable[Mapping[str, Any]]) -> Dict[str, Any]:
    """Per task (and ablation variant) summary of planner statistics documents."""

    groups: Dict[str, List[Mapping[str, Any]]] = {}
    for record in records:
        key = str(record.get("task", "task"))
        if record.get("variant"):
            key = f"{key}/{record['variant']}"
        groups.setdefault(key, []).append(record)
    if not groups:
        raise AggregationError("nothing to aggregate")
    table = {}
    for key in sorted(groups):
        group = groups[key]
        solved = [record for record in group if record.get("success")]
        row: Dict[str, Any] = {
            "runs": len(group),
            "successes": len(solved),
            "success_rate": len(solved) / len(group),
        }
        if solved:
            times = [float(record["time_to_feasible"]) for record in solved]
            row["time_to_feasible"] = mean_std(times)
            row["time_to_feasible_shortest_80"] = shortest_fraction_mean(times)
            row["total_time"] = mean_std([float(record["total_time"]) for record in solved])
            row["projection_fraction"] = mean_std([float(record["projection_fraction"]) for record in solved])
            row["feasible_length"] = mean_std([float(record["feasible_length"]) for record in solved])
            row["smoothed_length"] = mean_std([float(record["smoothed_length"]) for record in solved])
            row["iterations"] = mean_std([float(record["iterations"]) for record in solved])
        table[key] = row
    return table


def planning_time_distribution(times: Iterable[float]) -> List[float]:
    """Planning times sorted in increasing order."""

    return sorted(float(value) for value in times)


__all__ = [
    "EpisodeMetrics",
    "SUCCESS_ERROR",
    "TIME_LIMIT",
    "aggregate",
    "aggregate_planning",
    "is_success",
    "mean_std",
    "planning_time_distribution",
    "shortest_fraction_mean",
    "task_error",
]
