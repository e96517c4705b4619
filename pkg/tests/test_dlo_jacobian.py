"""Model-based Jacobian estimation and its online adaptation."""

from __future__ import annotations

import numpy as np
import pytest

from dloplan.errors import DimensionMismatchError, JacobianEstimationError
from dloplan.services.der_model import DloParams, forward_pred
from dloplan.services.dlo_jacobian import (
    ADAPTED,
    MODEL,
    TWIST_DIM,
    DloJacobian,
    adapt,
    estimate_jacobian,
    perturb_end_poses,
)


SEGMENTS = 10
DT = 0.2


def _random_jacobian(seed: int = 0) -> DloJacobian:
    return DloJacobian(np.random.default_rng(seed).normal(size=(3 * SEGMENTS, TWIST_DIM)))


class TestDloJacobian:
    def test_shape_is_checked(self):
        with pytest.raises(DimensionMismatchError):
            DloJacobian(np.zeros((3 * SEGMENTS, 6)))

    def test_rows_must_come_in_triples(self):
        with pytest.raises(DimensionMismatchError):
            DloJacobian(np.zeros((31, TWIST_DIM)))

    def test_non_finite_entries_are_rejected(self):
        matrix = np.zeros((3 * SEGMENTS, TWIST_DIM))
        matrix[4, 2] = np.nan
        with pytest.raises(JacobianEstimationError):
            DloJacobian(matrix)

    def test_predict_returns_feature_velocities(self):
        jacobian = _random_jacobian()
        twist = np.arange(TWIST_DIM, dtype=float)
        velocities = jacobian.predict(twist)
        assert velocities.shape == (SEGMENTS, 3)
        np.testing.assert_allclose(velocities.ravel(), jacobian.matrix @ twist)
        assert jacobian.segment_count == SEGMENTS


class TestPerturbEndPoses:
    def test_zero_twist_keeps_the_poses(self, stable_arch):
        poses = stable_arch.end_poses()
        moved = perturb_end_poses(poses, np.zeros(TWIST_DIM), DT)
        for before, after in zip(poses, moved):
            np.testing.assert_allclose(after, before, atol=1e-15)

    def test_linear_parts_translate_each_end(self, stable_arch):
        poses = stable_arch.end_poses()
        twist = np.zeros(TWIST_DIM)
        twist[2] = 0.1
        twist[6] = -0.05
        moved = perturb_end_poses(poses, twist, DT)
        np.testing.assert_allclose(moved.left_position - poses.left_position, [0.0, 0.0, 0.02])
        np.testing.assert_allclose(moved.right_position - poses.right_position, [-0.01, 0.0, 0.0])

    def test_twist_length_is_checked(self, stable_arch):
        with pytest.raises(DimensionMismatchError):
            perturb_end_poses(stable_arch.end_poses(), np.zeros(6), DT)


class TestAdaptation:
    def test_small_twist_is_ignored(self):
        jacobian = _random_jacobian()
        twist = np.full(TWIST_DIM, 1e-6)
        assert adapt(jacobian, twist, np.ones((SEGMENTS, 3)), DT) is jacobian

    def test_full_step_reproduces_the_observation(self):
        jacobian = _random_jacobian(1)
        twist = np.random.default_rng(2).normal(size=TWIST_DIM)
        displacement = np.random.default_rng(3).normal(size=(SEGMENTS, 3)) * 0.01
        updated = adapt(jacobian, twist, displacement, DT, forgetting=1.0)
        np.testing.assert_allclose(updated.matrix @ twist, displacement.ravel() / DT, atol=1e-10)
        assert updated.source == ADAPTED

    def test_update_is_rank_one_along_the_twist(self):
        jacobian = _random_jacobian(4)
        twist = np.zeros(TWIST_DIM)
        twist[0] = 1.0
        updated = adapt(jacobian, twist, np.ones((SEGMENTS, 3)), DT, forgetting=0.5)
        np.testing.assert_allclose(updated.matrix[:, 1:], jacobian.matrix[:, 1:])


@pytest.mark.slow
class TestEstimation:
    def test_estimate_predicts_small_end_motions(self, stable_arch):
        params = DloParams()
        jacobian = estimate_jacobian(stable_arch, params)
        assert jacobian.source == MODEL
        assert jacobian.matrix.shape == (3 * SEGMENTS, TWIST_DIM)

        twist = np.zeros(TWIST_DIM)
        twist[0] = 0.02
        twist[8] = 0.01
        step = 0.1
        moved = forward_pred(stable_arch, perturb_end_poses(stable_arch.end_poses(), twist, step), params)
        observed = moved.feature_points - stable_arch.feature_points
        np.testing.assert_allclose(jacobian.predict(twist) * step, observed, atol=2e-4)

    def test_grasped_points_move_with_the_ends(self, stable_arch):
        jacobian = estimate_jacobian(stable_arch, DloParams())
        matrix = jacobian.matrix
        np.testing.assert_allclose(matrix[0:3, 0:3], np.eye(3), atol=1e-4)
        np.testing.assert_allclose(matrix[-3:, 6:9], np.eye(3), atol=1e-4)
