"""Quasi-static ground truth: joints integrate the command, the rod settles under its true parameters."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from dloplan.errors import DimensionMismatchError, InvalidInputError, ProjectionFailedError, SimulationFaultError
from dloplan.services.arm_kinematics import DualArm
from dloplan.services.der_model import DloConfig, DloParams, ProjectionSettings, forward_pred, project_stable
from dloplan.services.scene_sdf import CollisionMargins, SdfGrid, state_collision_free


logger = logging.getLogger(__name__)

SNAP_RATIO = 5.0


class SimState(NamedTuple):
    q: np.ndarray
    dlo: DloConfig
    t: float


class StepResult(NamedTuple):
    state: SimState
    collision: bool
    overstretch: bool
    snap: bool

    @property
    def flags(self) -> Tuple[str, ...]:
        return tuple(name for name in ("collision", "overstretch", "snap") if getattr(self, name))


@dataclass(frozen=True)
class PerturbationSpec:
    """Ranges of the multiplicative errors between the planner's model and the simulated rod."""

    twist_range: Tuple[float, float] = (0.8, 1.25)
    density_range: Tuple[float, float] = (0.8, 1.25)
    bend_range: Tuple[float, float] = (0.9, 1.1)

    def __post_init__(self) -> None:
        for name in ("twist_range", "density_range", "bend_range"):
            low, high = getattr(self, name)
            if not 0.0 < low <= high:
                raise InvalidInputError(f"{name} must satisfy 0 < low <= high")

    @property
    def is_identity(self) -> bool:
        return all(range_ == (1.0, 1.0) for range_ in (self.twist_range, self.density_range, self.bend_range))

    @classmethod
    def identity(cls) -> "PerturbationSpec":
        return cls((1.0, 1.0), (1.0, 1.0), (1.0, 1.0))

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "PerturbationSpec":
        def pair(key: str, default: Tuple[float, float]) -> Tuple[float, float]:
            value = config.get(key)
            if value is None:
                return default
            low, high = (float(part) for part in value)
            return low, high

        return cls(
            pair("PERTURB_TWIST_RANGE", cls.twist_range),
            pair("PERTURB_DENSITY_RANGE", cls.density_range),
            pair("PERTURB_BEND_RANGE", cls.bend_range),
        )


def _log_uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    low, high = bounds
    if low == high:
        return low
    return float(math.exp(rng.uniform(math.log(low), math.log(high))))


def perturb_params(params: DloParams, spec: PerturbationSpec, rng: np.random.Generator) -> DloParams:
    """Draw the simulator's true parameters around the planner's ``params``."""

    if spec.is_identity:
        return params
    twist = _log_uniform(rng, spec.twist_range)
    density = _log_uniform(rng, spec.density_range)
    bend = rng.uniform(spec.bend_range[0], spec.bend_range[1], size=params.segment_count)
    if params.bend_multipliers is not None:
        bend = bend * np.asarray(params.bend_multipliers)
    return replace(
        params,
        twist_stiffness=params.twist_stiffness * twist,
        linear_density=params.linear_density * density,
        bend_multipliers=tuple(float(value) for value in bend),
    )


@dataclass
class Simulator:
    robot: DualArm
    grid: SdfGrid
    params: DloParams
    projection: ProjectionSettings = field(default_factory=ProjectionSettings)
    margins: Optional[CollisionMargins] = None

    def __post_init__(self) -> None:
        if self.margins is None:
            self.margins = CollisionMargins.for_rod(self.params.diameter, clearance=0.0, check_self=False)

    def reset(self, dlo: DloConfig, q: np.ndarray) -> SimState:
        """Settle ``dlo`` under the true parameters at the given joints."""

        try:
            settled = project_stable(dlo, self.params, self.projection)
        except ProjectionFailedError as exc:
            raise SimulationFaultError(f"initial rod is not stable under the true parameters: {exc}") from exc
        return SimState(np.array(q, dtype=float), settled, 0.0)

    def step(self, state: SimState, u: np.ndarray, dt: float) -> StepResult:
        return sim_step(self, state, u, dt)


def sim_step(sim: Simulator, state: SimState, u: np.ndarray, dt: float) -> StepResult:
    """Advance one control period. Raises ``SimulationFaultError`` when the rod cannot settle.

    A command that would pull the grasps further apart than the rod length is
    refused: joints and rod keep their previous values and only the clock moves.
    """

    u = np.asarray(u, dtype=float)
    if u.shape != state.q.shape:
        raise DimensionMismatchError(f"command has shape {u.shape}, joints {state.q.shape}")
    if not np.any(u):
        return StepResult(SimState(state.q, state.dlo, state.t + dt), False, False, False)

    q = state.q + u * dt
    poses = sim.robot.end_poses(q)
    separation = float(np.linalg.norm(poses.right_position - poses.left_position))
    if separation >= sim.params.total_length:
        logger.debug("Ends %.4f m apart, rod overstretched", separation)
        return StepResult(SimState(state.q, state.dlo, state.t + dt), False, True, False)

    try:
        dlo = forward_pred(state.dlo, poses, sim.params, sim.projection)
    except ProjectionFailedError as exc:
        raise SimulationFaultError(f"rod failed to settle at t={state.t + dt:.2f}: {exc}") from exc

    # Grasped vertices plus the virtual ones, so end rotations count as end motion.
    m = dlo.segment_count
    ends = [0, 1, m, m + 1]
    end_motion = float(np.max(np.linalg.norm(dlo.vertices[ends] - state.dlo.vertices[ends], axis=1)))
    feature_motion = float(np.max(np.linalg.norm(dlo.feature_points - state.dlo.feature_points, axis=1)))
    snap = feature_motion > SNAP_RATIO * end_motion + 1e-6
    collision = not state_collision_free(dlo, q, sim.robot, sim.grid, sim.margins)
    return StepResult(SimState(q, dlo, state.t + dt), collision, False, snap)


__all__ = [
    "PerturbationSpec",
    "SimState",
    "Simulator",
    "StepResult",
    "perturb_params",
    "sim_step",
]
