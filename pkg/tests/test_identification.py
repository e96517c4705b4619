"""Coarse parameter identification: cost, swarm search and the excitation script."""

from __future__ import annotations

import numpy as np
import pytest

from dloplan.errors import InvalidInputError
from dloplan.services.der_model import DloParams, arch_config, project_stable
from dloplan.services.identification import (
    IdObservation,
    PsoSettings,
    collect_observations,
    designed_trajectory,
    identification_cost,
    params_from_theta,
    pso_identify,
    theta_from_params,
)
from dloplan.services.quasistatic_sim import Simulator

from conftest import ARCH_HEADING, ARCH_LEFT


@pytest.fixture(scope="module")
def observations(stable_arch):
    params = DloParams()
    wide = project_stable(arch_config(ARCH_LEFT, ARCH_HEADING, 0.3, params), params)
    return IdObservation([stable_arch, wide], [0.0, 1.0])


class TestTheta:
    def test_round_trip_keeps_the_ratios(self):
        params = DloParams(bend_stiffness=2.0, twist_stiffness=3.0, linear_density=0.5)
        restored = params_from_theta(theta_from_params(params), params)
        assert restored.twist_stiffness == pytest.approx(3.0)
        assert restored.linear_density == pytest.approx(0.5)
        assert restored.bend_multipliers is None

    def test_bend_stiffness_is_kept(self):
        base = DloParams(bend_stiffness=2.0)
        params = params_from_theta([0.0, np.log(2.0)], base)
        assert params.bend_stiffness == pytest.approx(2.0)
        assert params.twist_stiffness == pytest.approx(2.0)
        assert params.linear_density == pytest.approx(4.0)


class TestCost:
    def test_true_ratios_cost_nothing(self, observations):
        cost, residuals = identification_cost(theta_from_params(DloParams()), observations, DloParams())
        assert cost < 1e-6
        assert len(residuals) == len(observations)

    def test_heavier_rod_costs_more(self, observations):
        true_theta = theta_from_params(DloParams())
        heavy, _ = identification_cost(true_theta + np.array([0.0, 1.5]), observations, DloParams())
        exact, _ = identification_cost(true_theta, observations, DloParams())
        assert heavy > exact


class TestSwarm:
    def test_settings_are_checked(self):
        with pytest.raises(InvalidInputError):
            PsoSettings(particles=0)
        with pytest.raises(InvalidInputError):
            PsoSettings(lower=(1.0, 0.0), upper=(0.0, 1.0))

    def test_empty_observations_are_rejected(self):
        with pytest.raises(InvalidInputError):
            pso_identify(IdObservation([]), DloParams())

    def test_best_cost_never_increases(self, observations):
        settings = PsoSettings(particles=4, iterations=3, seed=2)
        result = pso_identify(observations, DloParams(), settings)
        assert len(result.history) == settings.iterations + 1
        assert all(later <= earlier for earlier, later in zip(result.history, result.history[1:]))
        assert result.evaluations == settings.particles * (settings.iterations + 1)
        assert result.cost == pytest.approx(result.history[-1])

    def test_initial_guess_seeds_the_swarm(self, observations):
        settings = PsoSettings(particles=3, iterations=0)
        result = pso_identify(observations, DloParams(), settings, initial=theta_from_params(DloParams()))
        assert result.cost < 1e-6
        np.testing.assert_allclose(result.theta, theta_from_params(DloParams()))
        assert result.as_dict()["twist_ratio"] == pytest.approx(1.2)

    def test_same_seed_same_result(self, observations):
        settings = PsoSettings(particles=3, iterations=2, seed=5)
        first = pso_identify(observations, DloParams(), settings)
        second = pso_identify(observations, DloParams(), settings)
        np.testing.assert_array_equal(first.theta, second.theta)


@pytest.mark.slow
class TestScript:
    def test_script_snapshots_every_key_pose(self, robot, empty_grid):
        params = DloParams()
        script = designed_trajectory(robot, params, rng=np.random.default_rng(0))
        assert len(script.snapshot_indices) == 6
        steps = np.abs(np.diff(script.joint_path, axis=0))
        assert np.max(steps) <= 0.5 * script.dt + 1e-9

        observed = collect_observations(Simulator(robot, empty_grid, params), script)
        assert len(observed) == 6
        assert observed.times[0] == 0.0
        cost, _ = identification_cost(theta_from_params(params), observed, params)
        assert cost < 1e-3
