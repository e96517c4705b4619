"""Episode metrics validation and batch aggregation."""

from __future__ import annotations

import numpy as np
import pytest

from dloplan.errors import AggregationError
from dloplan.services.metrics import (
    EpisodeMetrics,
    aggregate,
    aggregate_planning,
    is_success,
    mean_std,
    planning_time_distribution,
    shortest_fraction_mean,
    task_error,
)


def _metrics(**overrides) -> EpisodeMetrics:
    values = dict(
        task="demo",
        mode="closed-loop",
        seed=0,
        segment_count=10,
        success=True,
        final_error=0.001,
        collision_time=0.0,
        execution_time=30.0,
        replans=0,
        planning_time=2.0,
        feasible_length=0.8,
        smoothed_length=0.6,
    )
    values.update(overrides)
    return EpisodeMetrics(**values)


class TestEpisodeMetrics:
    def test_success_criteria(self):
        assert is_success(0.01, 100.0, False)
        assert not is_success(0.05, 100.0, False)
        assert not is_success(0.01, 181.0, False)
        assert not is_success(0.01, 100.0, True)

    def test_contradicting_success_flag_is_rejected(self):
        with pytest.raises(AggregationError):
            _metrics(final_error=0.2)

    def test_negative_metric_is_rejected(self):
        with pytest.raises(AggregationError):
            _metrics(collision_time=-1.0)

    def test_non_finite_metric_is_rejected(self):
        with pytest.raises(AggregationError):
            _metrics(planning_time=float("nan"))

    def test_incomplete_mapping_is_rejected(self):
        with pytest.raises(AggregationError):
            EpisodeMetrics.from_mapping({"task": "demo"})

    def test_mapping_round_trip(self):
        record = _metrics(cause="")
        assert EpisodeMetrics.from_mapping(record.as_dict()) == record

    def test_task_error_is_the_stacked_norm(self):
        goal = np.zeros((2, 3))
        reached = np.array([[0.03, 0.0, 0.0], [0.0, 0.04, 0.0]])
        assert task_error(reached, goal) == pytest.approx(0.05)


class TestStatistics:
    def test_population_standard_deviation(self):
        assert mean_std([0.001, 0.003]) == pytest.approx({"mean": 0.002, "std": 0.001})

    def test_single_value_has_zero_spread(self):
        assert mean_std([4.0]) == {"mean": 4.0, "std": 0.0}

    def test_shortest_fraction_keeps_at_least_one(self):
        assert shortest_fraction_mean([5.0]) == 5.0
        assert shortest_fraction_mean([1.0, 2.0, 3.0, 4.0, 100.0]) == pytest.approx(2.5)

    def test_distribution_is_sorted(self):
        assert planning_time_distribution([3, 1.5, 2]) == [1.5, 2.0, 3.0]


class TestAggregate:
    def test_groups_by_task_and_mode(self):
        records = [
            _metrics(final_error=0.001),
            _metrics(final_error=0.003),
            _metrics(mode="open-loop", success=False, final_error=0.3, cause="task_error"),
        ]
        report = aggregate(records)
        assert report["segment_count"] == 10
        closed = report["groups"]["demo/closed-loop"]
        assert closed["runs"] == 2
        assert closed["success_rate"] == 1.0
        assert closed["final_error"]["mean"] == pytest.approx(0.002)
        assert closed["final_error"]["std"] == pytest.approx(0.001)
        opened = report["groups"]["demo/open-loop"]
        assert opened["success_rate"] == 0.0
        assert opened["failure_causes"] == {"task_error": 1}
        assert "final_error_successful" not in opened

    def test_mixed_discretizations_are_rejected(self):
        with pytest.raises(AggregationError):
            aggregate([_metrics(), _metrics(segment_count=12)])

    def test_empty_batch_is_rejected(self):
        with pytest.raises(AggregationError):
            aggregate([])


class TestAggregatePlanning:
    def test_variants_are_grouped_separately(self):
        solved = {
            "task": "shelf_cross",
            "success": True,
            "time_to_feasible": 2.0,
            "total_time": 3.0,
            "projection_fraction": 0.4,
            "feasible_length": 1.0,
            "smoothed_length": 0.7,
            "iterations": 150,
        }
        table = aggregate_planning([solved, {**solved, "variant": "no_task_space"}, {"task": "shelf_cross"}])
        assert table["shelf_cross"]["runs"] == 2
        assert table["shelf_cross"]["success_rate"] == 0.5
        assert table["shelf_cross/no_task_space"]["time_to_feasible"]["mean"] == 2.0

    def test_empty_batch_is_rejected(self):
        with pytest.raises(AggregationError):
            aggregate_planning([])
