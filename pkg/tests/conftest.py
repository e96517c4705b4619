"""Shared fixtures: bundled robot, a stable arch, small scenes and the test toolkit."""

from __future__ import annotations

import numpy as np
import pytest

from config import TestConfig
from dloplan import create_toolkit
from dloplan.geometry import make_transform
from dloplan.services.arm_kinematics import ArmChain, CollisionSphere, JointSpec
from dloplan.services.der_model import DloParams, arch_config, project_stable
from dloplan.services.scene_sdf import Box, CollisionMargins, Scene, build_sdf
from dloplan.services.tasks import bundled_path, load_robot, load_scene, load_task, resolve_joints


ARCH_LEFT = np.array([0.35, 0.1, 0.3])
ARCH_HEADING = np.array([0.0, -1.0, 0.0])
ARCH_SEPARATION = 0.2
GRID_CELL = 0.02


def single_joint_chain(link_length: float = 1.0) -> ArmChain:
    """A planar lever: one revolute joint about z and a flange ``link_length`` along x."""

    joint = JointSpec("joint_1", np.array([0.0, 0.0, 1.0]), np.eye(4), -np.pi, np.pi)
    tool = make_transform(np.eye(3), (link_length, 0.0, 0.0))
    sphere = CollisionSphere(1, np.array([link_length / 2.0, 0.0, 0.0]), 0.05)
    return ArmChain("lever", np.eye(4), (joint,), tool, (sphere,))


@pytest.fixture
def params() -> DloParams:
    return DloParams()


@pytest.fixture(scope="session")
def raw_arch():
    return arch_config(ARCH_LEFT, ARCH_HEADING, ARCH_SEPARATION, DloParams())


@pytest.fixture(scope="session")
def stable_arch(raw_arch):
    return project_stable(raw_arch, DloParams())


@pytest.fixture(scope="session")
def robot():
    return load_robot(bundled_path("robots", "dual_ur5"))


@pytest.fixture(scope="session")
def box_scene() -> Scene:
    return Scene(
        "test_box",
        (Box(np.array([0.5, 0.0, 0.3]), np.array([0.05, 0.05, 0.1])),),
        np.array([0.2, -0.3, 0.0]),
        np.array([0.8, 0.3, 0.6]),
    )


@pytest.fixture(scope="session")
def box_grid(box_scene):
    return build_sdf(box_scene, GRID_CELL)


@pytest.fixture(scope="session")
def empty_grid():
    return build_sdf(load_scene(bundled_path("scenes", "empty")), GRID_CELL)


@pytest.fixture(scope="session")
def empty_task(empty_grid):
    """The bundled ``empty_reach`` task with its start joints resolved."""

    task = load_task(bundled_path("tasks", "empty_reach"))
    return resolve_joints(task, empty_grid, CollisionMargins.for_rod(task.planner_params.diameter))


@pytest.fixture
def toolkit(tmp_path):
    return create_toolkit(
        TestConfig,
        OUTPUT_DIR=str(tmp_path / "runs"),
        SDF_CACHE_DIR=str(tmp_path / "sdf"),
    )
