"""Forward/inverse kinematics, grasp convention and the closed-chain projection."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dloplan.errors import FormatError, InvalidInputError
from dloplan.services.arm_kinematics import (
    DualArm,
    IkSettings,
    closed_chain_error,
    dlo_frame_from_gripper,
    forward_kinematics,
    geometric_jacobian,
    gripper_from_dlo_frame,
    ik_random,
    pose_error,
    project_closed_chain,
    random_dual_ik,
    solve_ik,
)

from conftest import single_joint_chain


FD_STEP = 1e-7
JACOBIAN_SAMPLES = 100
Q_LEFT = np.array([0.1, -1.2, 1.4, -1.6, -1.5, 0.3])


def _first_dual_ik(robot, cfg, seeds=range(20)):
    for seed in seeds:
        q = random_dual_ik(robot, cfg, np.random.default_rng(seed))
        if q is not None:
            return q
    pytest.fail("no IK solution for the test arch")


class TestForwardKinematics:
    def test_lever_tip_follows_the_joint(self):
        chain = single_joint_chain(1.0)
        fk = forward_kinematics(chain, np.array([np.pi / 2]))
        np.testing.assert_allclose(fk.pose[:3, 3], [0.0, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(fk.sphere_centers, [[0.0, 0.5, 0.0]], atol=1e-12)

    @pytest.mark.parametrize("side", ["left", "right"])
    def test_jacobian_matches_finite_differences(self, robot, side):
        chain = getattr(robot, side)
        rng = np.random.default_rng(11)
        for _ in range(JACOBIAN_SAMPLES):
            q = rng.uniform(chain.lower, chain.upper)
            jacobian = geometric_jacobian(chain, q)
            for i in range(chain.n_joints):
                ahead = q.copy()
                ahead[i] += FD_STEP
                behind = q.copy()
                behind[i] -= FD_STEP
                pose_ahead = forward_kinematics(chain, ahead).pose
                pose_behind = forward_kinematics(chain, behind).pose
                linear = (pose_ahead[:3, 3] - pose_behind[:3, 3]) / (2.0 * FD_STEP)
                angular = Rotation.from_matrix(pose_ahead[:3, :3] @ pose_behind[:3, :3].T).as_rotvec() / (2.0 * FD_STEP)
                np.testing.assert_allclose(jacobian[:3, i], linear, atol=1e-6)
                np.testing.assert_allclose(jacobian[3:, i], angular, atol=1e-6)

    def test_stacked_jacobian_is_block_diagonal(self, robot):
        q = np.concatenate([Q_LEFT, Q_LEFT])
        jacobian = robot.stacked_jacobian(q)
        assert jacobian.shape == (12, 12)
        np.testing.assert_array_equal(jacobian[:6, 6:], 0.0)
        np.testing.assert_array_equal(jacobian[6:, :6], 0.0)

    def test_sphere_jacobian_shape(self, robot):
        centers, jacobian = robot.sphere_jacobian(robot.home)
        assert jacobian.shape == (3 * centers.shape[0], robot.n_joints)

    def test_split_rejects_wrong_length(self, robot):
        with pytest.raises(InvalidInputError):
            robot.split(np.zeros(robot.n_joints - 1))


class TestInverseKinematics:
    def test_solve_ik_from_nearby_seed(self, robot):
        chain = robot.left
        target = forward_kinematics(chain, Q_LEFT).pose
        settings = IkSettings()
        q = solve_ik(chain, Q_LEFT + 0.05, target, settings)
        assert q is not None
        error = pose_error(target, forward_kinematics(chain, q).pose)
        assert np.linalg.norm(error[:3]) <= settings.position_tolerance
        assert np.linalg.norm(error[3:]) <= settings.rotation_tolerance

    def test_out_of_reach_target_has_no_solution(self, robot):
        target = np.eye(4)
        target[:3, 3] = [10.0, 0.0, 0.0]
        assert ik_random(robot.left, target, np.random.default_rng(0)) is None

    def test_ik_respects_joint_limits(self, robot):
        target = forward_kinematics(robot.left, Q_LEFT).pose
        q = ik_random(robot.left, target, np.random.default_rng(1))
        assert q is not None
        assert robot.left.within_limits(q)


class TestGraspConvention:
    @pytest.mark.parametrize("side", ["left", "right"])
    def test_gripper_frame_round_trip(self, side):
        frame = Rotation.from_rotvec([0.3, -0.7, 1.1]).as_matrix()
        np.testing.assert_allclose(dlo_frame_from_gripper(gripper_from_dlo_frame(frame, side), side), frame, atol=1e-12)

    def test_gripper_z_points_into_the_rod(self, stable_arch):
        poses = stable_arch.end_poses()
        left = gripper_from_dlo_frame(poses.left_frame, "left")
        right = gripper_from_dlo_frame(poses.right_frame, "right")
        np.testing.assert_allclose(left[:, 2], poses.left_frame[:, 0])
        np.testing.assert_allclose(right[:, 2], -poses.right_frame[:, 0])


class TestClosedChain:
    def test_random_dual_ik_holds_the_rod(self, robot, stable_arch):
        q = _first_dual_ik(robot, stable_arch)
        position, rotation = closed_chain_error(robot, q, stable_arch)
        settings = IkSettings()
        assert position <= settings.position_tolerance
        assert rotation <= settings.rotation_tolerance

    def test_end_poses_match_the_rod_after_ik(self, robot, stable_arch):
        q = _first_dual_ik(robot, stable_arch)
        poses = robot.end_poses(q)
        np.testing.assert_allclose(poses.left_position, stable_arch.vertices[1], atol=1e-4)
        np.testing.assert_allclose(poses.right_position, stable_arch.vertices[-2], atol=1e-4)

    def test_projection_recovers_from_a_perturbed_seed(self, robot, stable_arch):
        q = _first_dual_ik(robot, stable_arch)
        seed = q + np.random.default_rng(3).normal(scale=0.01, size=q.shape)
        projected = project_closed_chain(robot, seed, stable_arch)
        assert projected is not None
        position, rotation = closed_chain_error(robot, projected, stable_arch)
        assert position <= IkSettings().position_tolerance
        assert rotation <= IkSettings().rotation_tolerance

    def test_projection_gives_up_after_budget(self, robot, stable_arch):
        settings = IkSettings(max_iter=0)
        assert project_closed_chain(robot, robot.home, stable_arch, settings) is None


class TestRobotDocument:
    def test_wrong_format_is_rejected(self):
        with pytest.raises(FormatError):
            DualArm.from_mapping({"format": "something.else", "version": 1})

    def test_missing_arms_are_rejected(self):
        with pytest.raises(FormatError):
            DualArm.from_mapping({"format": "dloplan.robot", "version": 1, "chains": {}})

    def test_bundled_robot_has_two_six_joint_arms(self, robot):
        assert robot.left.n_joints == 6
        assert robot.right.n_joints == 6
        assert robot.home.shape == (12,)
