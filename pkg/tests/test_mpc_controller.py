"""Sequential-QP tracking controller and the replanning triggers."""

from __future__ import annotations

import numpy as np
import pytest

from dloplan.errors import DimensionMismatchError, InvalidInputError
from dloplan.services.dlo_jacobian import TWIST_DIM, DloJacobian
from dloplan.services.mpc_controller import (
    DEGRADED,
    INFEASIBLE,
    SOLVED,
    MpcController,
    MpcProblem,
    MpcSettings,
    constraint_violations,
    detect_rapid_change,
    detect_stuck,
    interpolation_matrix,
    solve_mpc,
)
from dloplan.services.scene_sdf import Box, Scene, build_sdf, dlo_sphere_centers

from conftest import GRID_CELL


ROD_LENGTH = 0.5
SEGMENTS = 10


def _chord_jacobian(segments: int = SEGMENTS) -> DloJacobian:
    """Feature points blend the two end velocities linearly; rotations are ignored."""

    matrix = np.zeros((3 * segments, TWIST_DIM))
    for k in range(segments):
        share = k / (segments - 1)
        matrix[3 * k : 3 * k + 3, 0:3] = (1.0 - share) * np.eye(3)
        matrix[3 * k : 3 * k + 3, 6:9] = share * np.eye(3)
    return DloJacobian(matrix)


def _chord_features(left: np.ndarray, right: np.ndarray, segments: int = SEGMENTS) -> np.ndarray:
    shares = np.linspace(0.0, 1.0, segments)[:, None]
    return (1.0 - shares) * left + shares * right


def _problem(settings, x, q, x_ref=None, q_ref=None):
    horizon = settings.horizon
    x_ref = np.repeat(x[None], horizon, axis=0) if x_ref is None else x_ref
    q_ref = np.repeat(q[None], horizon, axis=0) if q_ref is None else q_ref
    return MpcProblem(settings, x_ref, q_ref, x, q, np.zeros_like(q), ROD_LENGTH)


@pytest.fixture
def held(robot, empty_task):
    """Start joints of the bundled task and chord-shaped feature points between the grippers."""

    q = empty_task.start_q
    poses = robot.end_poses(q)
    return q, _chord_features(poses.left_position, poses.right_position)


class TestSettings:
    def test_horizon_must_be_positive(self):
        with pytest.raises(InvalidInputError):
            MpcSettings(horizon=0)

    def test_weights_must_be_non_negative(self):
        with pytest.raises(InvalidInputError):
            MpcSettings(beta_x=-1.0)

    def test_overrides_skip_none(self):
        settings = MpcSettings.from_config({"MPC_BETA_X": 5.0}, beta_x=None, beta_q=2.0)
        assert settings.beta_x == pytest.approx(5.0)
        assert settings.beta_q == pytest.approx(2.0)

    def test_problem_checks_reference_shapes(self):
        settings = MpcSettings()
        x = np.zeros((SEGMENTS, 3))
        q = np.zeros(12)
        with pytest.raises(DimensionMismatchError):
            MpcProblem(settings, np.zeros((1, SEGMENTS, 3)), np.zeros((3, 12)), x, q, q, ROD_LENGTH)


class TestInterpolationMatrix:
    def test_rows_are_convex_weights(self):
        weights = interpolation_matrix(SEGMENTS)
        assert weights.shape == (3 * (SEGMENTS - 1) + 1, SEGMENTS)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0)

    def test_matches_the_collision_spheres(self, stable_arch):
        features = stable_arch.feature_points
        np.testing.assert_allclose(interpolation_matrix(SEGMENTS) @ features, dlo_sphere_centers(features))


class TestSolve:
    def test_reference_at_rest_gives_no_motion(self, robot, empty_grid, held):
        q, x = held
        output = solve_mpc(_problem(MpcSettings(), x, q), _chord_jacobian(), empty_grid, robot)
        assert output.status != INFEASIBLE
        np.testing.assert_allclose(output.u0, 0.0, atol=1e-3)

    def test_command_respects_speed_limit(self, robot, empty_grid, held):
        q, x = held
        settings = MpcSettings(u_max=0.3)
        x_ref = np.repeat((x + np.array([0.0, 0.0, 0.3]))[None], settings.horizon, axis=0)
        output = solve_mpc(_problem(settings, x, q, x_ref=x_ref), _chord_jacobian(), empty_grid, robot)
        assert np.all(np.abs(output.u0) <= settings.u_max + 1e-12)
        assert np.all(np.abs(output.controls) <= settings.u_max + 1e-12)

    def test_tracking_moves_toward_the_reference(self, robot, empty_grid, held):
        q, x = held
        settings = MpcSettings(beta_q=0.0)
        offset = np.array([0.0, 0.0, 0.05])
        x_ref = np.repeat((x + offset)[None], settings.horizon, axis=0)
        output = solve_mpc(_problem(settings, x, q, x_ref=x_ref), _chord_jacobian(), empty_grid, robot)
        predicted = output.predicted_x[-1]
        assert np.linalg.norm(predicted - (x + offset)) < np.linalg.norm(offset * np.ones_like(x))

    def test_stretch_limit_holds_when_the_reference_pulls_apart(self, robot, empty_grid, held):
        q, x = held
        settings = MpcSettings(beta_q=0.0)
        chord = x[-1] - x[0]
        direction = chord / np.linalg.norm(chord)
        target = _chord_features(x[0] - 0.4 * direction, x[-1] + 0.4 * direction)
        x_ref = np.repeat(target[None], settings.horizon, axis=0)
        output = solve_mpc(_problem(settings, x, q, x_ref=x_ref), _chord_jacobian(), empty_grid, robot)
        assert output.margins["stretch"] >= -0.02
        for features in output.predicted_x:
            assert np.linalg.norm(features[-1] - features[0]) <= ROD_LENGTH - settings.stretch_margin + 0.02

    def test_solved_prediction_keeps_the_length_limit(self, robot, empty_grid, held):
        q, x = held
        settings = MpcSettings(beta_q=0.0)
        chord = x[-1] - x[0]
        sideways = np.cross(chord, [0.0, 0.0, 1.0])
        sideways /= np.linalg.norm(sideways)
        target = _chord_features(x[0], x[-1] + 0.4 * sideways)
        x_ref = np.repeat(target[None], settings.horizon, axis=0)
        output = solve_mpc(_problem(settings, x, q, x_ref=x_ref), _chord_jacobian(), empty_grid, robot)
        if constraint_violations(output.margins, settings):
            assert output.status in (DEGRADED, INFEASIBLE)
        if output.status == SOLVED:
            assert output.margins["stretch"] >= -settings.slack_tolerance

    def test_rod_keeps_clearance_above_an_obstacle(self, robot, held):
        q, x = held
        middle = x[len(x) // 2]
        box = Box(middle - np.array([0.0, 0.0, 0.06]), np.array([0.08, 0.08, 0.02]))
        grid = build_sdf(Scene("ledge", (box,), middle - 0.4, middle + 0.4), GRID_CELL)
        settings = MpcSettings(beta_q=0.0)
        x_ref = np.repeat((x - np.array([0.0, 0.0, 0.1]))[None], settings.horizon, axis=0)
        output = solve_mpc(_problem(settings, x, q, x_ref=x_ref), _chord_jacobian(), grid, robot)
        assert np.all(np.abs(output.u0) <= settings.u_max + 1e-12)
        if output.status == SOLVED:
            assert output.margins["dlo_clearance"] >= settings.clearance - 1e-4
            assert output.margins["robot_clearance"] >= settings.clearance - 1e-4

    def test_jacobian_size_must_match(self, robot, empty_grid, held):
        q, x = held
        with pytest.raises(DimensionMismatchError):
            solve_mpc(_problem(MpcSettings(), x, q), _chord_jacobian(SEGMENTS + 1), empty_grid, robot)

    def test_controller_keeps_a_warm_start(self, robot, empty_grid, held):
        q, x = held
        settings = MpcSettings()
        controller = MpcController(robot, empty_grid, settings, ROD_LENGTH)
        x_ref = np.repeat(x[None], settings.horizon, axis=0)
        q_ref = np.repeat(q[None], settings.horizon, axis=0)
        output = controller.step(x, q, np.zeros_like(q), x_ref, q_ref, _chord_jacobian())
        assert output.controls.shape == (settings.horizon, q.size)
        controller.reset()
        assert controller._previous is None


class TestConstraintViolations:
    SETTINGS = MpcSettings(clearance=0.01, slack_tolerance=1e-4)

    def test_satisfied_margins(self):
        margins = {"robot_clearance": 0.05, "dlo_clearance": 0.01, "stretch": 0.0}
        assert constraint_violations(margins, self.SETTINGS) == []

    def test_slack_tolerance_is_allowed(self):
        margins = {"robot_clearance": 0.00995, "dlo_clearance": 0.00995, "stretch": -5e-5}
        assert constraint_violations(margins, self.SETTINGS) == []

    def test_each_missed_constraint_is_named(self):
        margins = {"robot_clearance": 0.0, "dlo_clearance": 0.02, "stretch": -0.01}
        assert constraint_violations(margins, self.SETTINGS) == ["robot_clearance", "stretch"]


class TestTriggers:
    def test_stuck_needs_a_full_window(self):
        history = [(np.zeros(12), 0.1)] * 9
        assert not detect_stuck(history, window=10)
        assert detect_stuck(history + [(np.zeros(12), 0.1)], window=10)

    def test_moving_arms_are_not_stuck(self):
        history = [(np.full(12, 0.2), 0.1)] * 10
        assert not detect_stuck(history, window=10)

    def test_small_error_is_not_stuck(self):
        history = [(np.zeros(12), 0.001)] * 10
        assert not detect_stuck(history, window=10)

    def test_rapid_change_compares_feature_and_end_speeds(self):
        slow = np.full((SEGMENTS, 3), 0.01)
        fast = slow.copy()
        fast[4] = [0.5, 0.0, 0.0]
        assert not detect_rapid_change(slow, end_speed=0.02)
        assert detect_rapid_change(fast, end_speed=0.02)
