"""Task documents, bundled data and start-joint resolution."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from dloplan.errors import ConfigurationError, FormatError, InvalidInputError
from dloplan.services.arm_kinematics import closed_chain_error
from dloplan.services.der_model import DloParams, length_violation
from dloplan.services.scene_sdf import CollisionMargins
from dloplan.services.tasks import (
    bundled_path,
    load_task,
    resolve_joints,
    task_from_mapping,
    task_summary,
)


BUNDLED_TASKS = ["empty_reach", "one_box_cross", "two_boxes_cross", "shelf_cross"]


def _task_payload(**extra):
    payload = json.loads(bundled_path("tasks", "empty_reach").read_text(encoding="utf-8"))
    payload.update(extra)
    return payload


class TestLoading:
    @pytest.mark.parametrize("name", BUNDLED_TASKS)
    def test_bundled_tasks_load_with_stable_rods(self, name):
        task = load_task(name)
        assert task.name == name
        assert task.start_dlo.segment_count == task.planner_params.segment_count
        assert length_violation(task.start_dlo) < 1e-3
        assert length_violation(task.goal_dlo) < 1e-3

    def test_identified_task_needs_parameters(self):
        with pytest.raises(ConfigurationError):
            load_task("shelf_identified")

    def test_identified_task_accepts_parameters(self):
        task = load_task("shelf_identified", planner_params=DloParams(linear_density=1.5))
        assert task.identify_first
        assert task.planner_params.linear_density == pytest.approx(1.5)
        assert task.dlo_params.linear_density == pytest.approx(2.0)

    def test_wrong_format_is_rejected(self):
        with pytest.raises(FormatError):
            task_from_mapping(_task_payload(format="dloplan.scene"))

    def test_missing_goal_is_rejected(self):
        payload = _task_payload()
        del payload["goal"]
        with pytest.raises(FormatError):
            task_from_mapping(payload)

    def test_discretizations_must_agree(self):
        with pytest.raises(ConfigurationError):
            task_from_mapping(_task_payload(), planner_params=DloParams(segment_count=8))

    def test_seed_override(self):
        task = load_task("empty_reach")
        assert task.with_seed(None) is task
        assert task.with_seed(9).seed == 9

    def test_summary_names_the_scene(self):
        summary = task_summary(load_task("empty_reach"))
        assert summary["scene"] == "empty"
        assert summary["segment_count"] == 10


class TestResolveJoints:
    def test_resolved_start_holds_the_rod(self, empty_task):
        position, rotation = closed_chain_error(empty_task.robot, empty_task.start_q, empty_task.start_dlo)
        assert position <= 1e-4
        assert rotation <= 1e-3

    def test_same_seed_same_start(self, empty_task, empty_grid):
        task = load_task("empty_reach")
        again = resolve_joints(task, empty_grid, CollisionMargins.for_rod(task.planner_params.diameter))
        np.testing.assert_array_equal(again.start_q, empty_task.start_q)

    def test_given_joints_are_checked(self, empty_grid):
        task = load_task("empty_reach")
        bad = replace(task, start_q=np.zeros(task.robot.n_joints))
        with pytest.raises(InvalidInputError):
            resolve_joints(bad, empty_grid, CollisionMargins.for_rod(task.planner_params.diameter))
