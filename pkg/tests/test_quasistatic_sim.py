"""Quasi-static ground-truth simulator and the perturbed rod parameters."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from dloplan.errors import DimensionMismatchError, InvalidInputError, SimulationFaultError
from dloplan.geometry import make_transform
from dloplan.services.arm_kinematics import DualArm
from dloplan.services.der_model import DloParams, ProjectionSettings
from dloplan.services.quasistatic_sim import (
    PerturbationSpec,
    SimState,
    Simulator,
    perturb_params,
    sim_step,
)

from conftest import single_joint_chain


DT = 0.2


def _levers() -> DualArm:
    """Two planar levers 0.4 m apart; at zero joints their tips are 0.4 m apart."""

    left = single_joint_chain(0.1)
    right = replace(single_joint_chain(0.1), base=make_transform(np.eye(3), (0.4, 0.0, 0.0)))
    return DualArm("levers", left, right)


@pytest.fixture
def simulator(robot, empty_grid, empty_task):
    return Simulator(robot, empty_grid, empty_task.planner_params)


@pytest.fixture
def settled(simulator, empty_task):
    return simulator.reset(empty_task.start_dlo, empty_task.start_q)


class TestPerturbation:
    def test_identity_spec_keeps_the_params(self):
        params = DloParams()
        assert perturb_params(params, PerturbationSpec.identity(), np.random.default_rng(0)) is params

    def test_draws_stay_within_ranges(self):
        params = DloParams()
        spec = PerturbationSpec()
        rng = np.random.default_rng(1)
        for _ in range(20):
            drawn = perturb_params(params, spec, rng)
            assert 0.8 <= drawn.twist_stiffness / params.twist_stiffness <= 1.25
            assert 0.8 <= drawn.linear_density / params.linear_density <= 1.25
            assert all(0.9 <= value <= 1.1 for value in drawn.bend_multipliers)
            assert len(drawn.bend_multipliers) == params.segment_count

    def test_same_stream_same_draw(self):
        spec = PerturbationSpec()
        first = perturb_params(DloParams(), spec, np.random.default_rng((3, 1)))
        second = perturb_params(DloParams(), spec, np.random.default_rng((3, 1)))
        assert first == second

    def test_inverted_range_is_rejected(self):
        with pytest.raises(InvalidInputError):
            PerturbationSpec(twist_range=(1.2, 0.8))

    def test_config_ranges(self):
        spec = PerturbationSpec.from_config({"PERTURB_TWIST_RANGE": [1.0, 1.0]})
        assert spec.twist_range == (1.0, 1.0)
        assert spec.density_range == PerturbationSpec().density_range


class TestSimStep:
    def test_zero_command_only_advances_time(self, simulator, settled):
        result = sim_step(simulator, settled, np.zeros_like(settled.q), DT)
        assert result.state.dlo is settled.dlo
        np.testing.assert_array_equal(result.state.q, settled.q)
        assert result.state.t == pytest.approx(DT)
        assert result.flags == ()

    def test_command_shape_is_checked(self, simulator, settled):
        with pytest.raises(DimensionMismatchError):
            simulator.step(settled, np.zeros(6), DT)

    def test_rod_follows_the_grippers(self, robot, simulator, settled):
        u = np.zeros_like(settled.q)
        u[0] = 0.05
        result = simulator.step(settled, u, DT)
        np.testing.assert_allclose(result.state.q, settled.q + u * DT)
        poses = robot.end_poses(result.state.q)
        m = result.state.dlo.segment_count
        np.testing.assert_allclose(result.state.dlo.vertices[1], poses.left_position, atol=1e-9)
        np.testing.assert_allclose(result.state.dlo.vertices[m], poses.right_position, atol=1e-9)
        assert not result.overstretch
        assert not result.snap

    def test_pulling_the_ends_apart_flags_overstretch(self, empty_grid, stable_arch):
        sim = Simulator(_levers(), empty_grid, DloParams())
        state = SimState(np.zeros(2), stable_arch, 0.0)
        result = sim.step(state, np.array([np.pi, 0.0]), 1.0)
        assert result.overstretch
        assert result.flags == ("overstretch",)
        assert result.state.dlo is stable_arch
        np.testing.assert_array_equal(result.state.q, state.q)
        assert result.state.t == pytest.approx(1.0)


class TestReset:
    def test_reset_settles_the_rod(self, settled, empty_task):
        assert settled.t == 0.0
        np.testing.assert_array_equal(settled.q, empty_task.start_q)
        np.testing.assert_allclose(settled.dlo.vertices[1], empty_task.start_dlo.vertices[1])

    def test_unsettled_rod_is_a_simulation_fault(self, robot, empty_grid, raw_arch):
        sim = Simulator(robot, empty_grid, DloParams(), ProjectionSettings(max_iterations=0))
        with pytest.raises(SimulationFaultError):
            sim.reset(raw_arch, robot.home)
