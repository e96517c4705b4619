"""Coarse identification of the rod's relative stiffness and density.

Only the ratios to the bending stiffness matter for the stable shapes, so the
search runs over ``log(twist / bend)`` and ``log(density / bend)``. Snapshots
come from a scripted lift/twist/slacken motion executed in the simulator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from dloplan.errors import InvalidInputError, ProjectionFailedError, TrajectoryError
from dloplan.geometry import axis_angle_matrix
from dloplan.services.arm_kinematics import DualArm, IkSettings, gripper_targets, random_dual_ik, solve_ik
from dloplan.services.der_model import (
    WORLD_UP,
    DloConfig,
    DloParams,
    EndPoses,
    ProjectionSettings,
    arch_config,
    project_stable,
    vertical_end_frames,
)
from dloplan.services.planner import dist_position
from dloplan.services.quasistatic_sim import Simulator


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PsoSettings:
    particles: int = 24
    iterations: int = 40
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    lower: Tuple[float, float] = (-6.0, -6.0)
    upper: Tuple[float, float] = (3.0, 6.0)
    velocity_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.particles < 1 or self.iterations < 0:
            raise InvalidInputError("PSO needs at least one particle and a non-negative iteration count")
        if any(low >= high for low, high in zip(self.lower, self.upper)):
            raise InvalidInputError("PSO search box is empty")

    @classmethod
    def from_config(cls, config: Mapping[str, Any], **overrides: Any) -> "PsoSettings":
        settings = cls(
            particles=int(config.get("PSO_PARTICLES", cls.particles)),
            iterations=int(config.get("PSO_ITERATIONS", cls.iterations)),
            inertia=float(config.get("PSO_INERTIA", cls.inertia)),
            cognitive=float(config.get("PSO_COGNITIVE", cls.cognitive)),
            social=float(config.get("PSO_SOCIAL", cls.social)),
        )
        return replace(settings, **{key: value for key, value in overrides.items() if value is not None})


@dataclass
class IdObservation:
    snapshots: List[DloConfig]
    times: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.snapshots)


@dataclass
class IdResult:
    theta: np.ndarray
    cost: float
    iterations: int
    evaluations: int
    history: List[float] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)

    @property
    def twist_ratio(self) -> float:
        return float(np.exp(self.theta[0]))

    @property
    def density_ratio(self) -> float:
        return float(np.exp(self.theta[1]))

    def to_params(self, base: DloParams) -> DloParams:
        return params_from_theta(self.theta, base)

    def as_dict(self) -> dict:
        return {
            "log_twist_ratio": float(self.theta[0]),
            "log_density_ratio": float(self.theta[1]),
            "twist_ratio": self.twist_ratio,
            "density_ratio": self.density_ratio,
            "cost": self.cost,
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "history": list(self.history),
            "residuals": list(self.residuals),
        }


def params_from_theta(theta: Sequence[float], base: DloParams) -> DloParams:
    """Isotropic parameters with ``base``'s bending stiffness and the given log ratios."""

    bend = base.bend_stiffness
    return replace(
        base,
        twist_stiffness=bend * float(np.exp(theta[0])),
        linear_density=bend * float(np.exp(theta[1])),
        bend_multipliers=None,
    )


def theta_from_params(params: DloParams) -> np.ndarray:
    return np.log([params.twist_stiffness / params.bend_stiffness, params.linear_density / params.bend_stiffness])


def identification_cost(
    theta: Sequence[float],
    observations: IdObservation,
    base: DloParams,
    projection: Optional[ProjectionSettings] = None,
) -> Tuple[float, List[float]]:
    """Sum over snapshots of the feature-point gap between each snapshot and its projection."""

    params = params_from_theta(theta, base)
    penalty = base.total_length
    residuals = []
    for snapshot in observations.snapshots:
        try:
            projected = project_stable(snapshot, params, projection)
        except ProjectionFailedError:
            residuals.append(penalty)
            continue
        residuals.append(dist_position(snapshot, projected))
    return float(sum(residuals)), residuals


def pso_identify(
    observations: IdObservation,
    base: DloParams,
    settings: Optional[PsoSettings] = None,
    projection: Optional[ProjectionSettings] = None,
    initial: Optional[Sequence[float]] = None,
) -> IdResult:
    """Particle swarm search over the log ratios; the global best cost never increases."""

    if not len(observations):
        raise InvalidInputError("identification needs at least one snapshot")
    settings = settings or PsoSettings()
    rng = np.random.default_rng(settings.seed)
    lower = np.asarray(settings.lower, dtype=float)
    upper = np.asarray(settings.upper, dtype=float)
    v_max = settings.velocity_fraction * (upper - lower)

    positions = rng.uniform(lower, upper, size=(settings.particles, lower.size))
    if initial is not None:
        positions[0] = np.clip(np.asarray(initial, dtype=float), lower, upper)
    velocities = rng.uniform(-v_max, v_max, size=positions.shape)

    evaluations = 0

    def evaluate(batch: np.ndarray) -> np.ndarray:
        nonlocal evaluations
        evaluations += batch.shape[0]
        return np.array([identification_cost(theta, observations, base, projection)[0] for theta in batch])

    costs = evaluate(positions)
    best_positions = positions.copy()
    best_costs = costs.copy()
    leader = int(np.argmin(best_costs))
    global_position = best_positions[leader].copy()
    global_cost = float(best_costs[leader])
    history = [global_cost]

    for iteration in range(1, settings.iterations + 1):
        r1 = rng.random(positions.shape)
        r2 = rng.random(positions.shape)
        velocities = (
            settings.inertia * velocities
            + settings.cognitive * r1 * (best_positions - positions)
            + settings.social * r2 * (global_position - positions)
        )
        velocities = np.clip(velocities, -v_max, v_max)
        positions = np.clip(positions + velocities, lower, upper)
        costs = evaluate(positions)
        improved = costs < best_costs
        best_positions[improved] = positions[improved]
        best_costs[improved] = costs[improved]
        leader = int(np.argmin(best_costs))
        if best_costs[leader] < global_cost:
            global_cost = float(best_costs[leader])
            global_position = best_positions[leader].copy()
        history.append(global_cost)
        logger.debug("PSO iteration %d: best cost %.6g", iteration, global_cost)

    _, residuals = identification_cost(global_position, observations, base, projection)
    logger.info(
        "Identified twist/bend %.4g, density/bend %.4g (cost %.4g)",
        np.exp(global_position[0]),
        np.exp(global_position[1]),
        global_cost,
    )
    return IdResult(global_position, global_cost, settings.iterations, evaluations, history, residuals)


# ---------------------------------------------------------------------------
# Excitation script
# ---------------------------------------------------------------------------


@dataclass
class IdentificationScript:
    start_dlo: DloConfig
    joint_path: np.ndarray
    snapshot_indices: List[int]
    dt: float
    key_poses: List[EndPoses] = field(default_factory=list)

    @property
    def duration(self) -> float:
        return (len(self.joint_path) - 1) * self.dt


def _key_poses(
    center: np.ndarray,
    heading: np.ndarray,
    separation: float,
    lift: float,
    twist: float,
    slack_separation: float,
) -> List[Tuple[np.ndarray, np.ndarray, float, float]]:
    """(left position, right position, left roll, right roll) per scripted pose."""

    def ends(gap: float, height: float):
        offset = 0.5 * gap * heading
        raised = center + height * WORLD_UP
        return raised - offset, raised + offset

    half = 0.5 * twist
    rest = ends(separation, 0.0)
    lifted = ends(separation, lift)
    slack = ends(slack_separation, lift)
    return [
        (*rest, 0.0, 0.0),
        (*lifted, 0.0, 0.0),
        (*lifted, half, -half),
        (*slack, half, -half),
        (*slack, 0.0, 0.0),
        (*rest, 0.0, 0.0),
    ]


def _pose(left: np.ndarray, right: np.ndarray, heading: np.ndarray, roll_left: float, roll_right: float) -> EndPoses:
    frame_left, frame_right = vertical_end_frames(
        axis_angle_matrix(WORLD_UP, roll_left) @ heading,
        axis_angle_matrix(WORLD_UP, roll_right) @ heading,
    )
    return EndPoses(left, frame_left, right, frame_right)


def _interpolate(a: EndPoses, b: EndPoses, fraction: float) -> EndPoses:
    frames = []
    for start, end in ((a.left_frame, b.left_frame), (a.right_frame, b.right_frame)):
        slerp = Slerp([0.0, 1.0], Rotation.from_matrix(np.stack([start, end])))
        frames.append(slerp([fraction]).as_matrix()[0])
    return EndPoses(
        (1.0 - fraction) * a.left_position + fraction * b.left_position,
        frames[0],
        (1.0 - fraction) * a.right_position + fraction * b.right_position,
        frames[1],
    )


def designed_trajectory(
    robot: DualArm,
    params: DloParams,
    center: Sequence[float] = (0.45, 0.0, 0.3),
    heading: Sequence[float] = (0.0, -1.0, 0.0),
    separation: float = 0.2,
    lift: float = 0.08,
    twist: float = np.pi / 2,
    slack_separation: float = 0.1,
    substeps: int = 10,
    dt: float = 0.2,
    u_max: float = 0.5,
    rng: Optional[np.random.Generator] = None,
    ik: Optional[IkSettings] = None,
) -> IdentificationScript:
    """Lift, twist by ``twist`` between the ends, slacken, untwist and return.

    Every key pose is a snapshot. Raises ``TrajectoryError`` when a scripted
    pose has no IK solution continuous with the previous one.
    """

    rng = rng if rng is not None else np.random.default_rng(0)
    ik = ik or IkSettings()
    heading = np.asarray(heading, dtype=float)
    heading = heading / np.linalg.norm(heading)
    center = np.asarray(center, dtype=float)
    keys = [
        _pose(left, right, heading, roll_left, roll_right)
        for left, right, roll_left, roll_right in _key_poses(center, heading, separation, lift, twist, slack_separation)
    ]

    start_dlo = arch_config(keys[0].left_position, heading, separation, params)
    q = random_dual_ik(robot, start_dlo, rng, settings=ik)
    if q is None:
        raise TrajectoryError("no IK solution for the scripted start pose")

    path = [q]
    snapshots = [0]
    for a, b in zip(keys, keys[1:]):
        for step in range(1, substeps + 1):
            targets = gripper_targets(_interpolate(a, b, step / substeps))
            q_left, q_right = robot.split(path[-1])
            left = solve_ik(robot.left, q_left, targets[0], ik)
            right = solve_ik(robot.right, q_right, targets[1], ik)
            if left is None or right is None:
                raise TrajectoryError(f"IK failed along the identification script (step {len(path)})")
            target_q = np.concatenate([left, right])
            count = max(1, int(np.ceil(np.max(np.abs(target_q - path[-1])) / (u_max * dt) - 1e-9)))
            origin = path[-1]
            for sub in range(1, count + 1):
                path.append(origin + (target_q - origin) * sub / count)
        snapshots.append(len(path) - 1)

    logger.info("Identification script: %d joint samples, %d snapshots", len(path), len(snapshots))
    return IdentificationScript(start_dlo, np.array(path), snapshots, dt, keys)


def collect_observations(sim: Simulator, script: IdentificationScript) -> IdObservation:
    """Replay ``script`` in the simulator and keep the settled rod at each snapshot."""

    state = sim.reset(script.start_dlo, script.joint_path[0])
    snapshots = [state.dlo] if 0 in script.snapshot_indices else []
    times = [0.0] if snapshots else []
    marks = set(script.snapshot_indices)
    for index in range(1, len(script.joint_path)):
        u = (script.joint_path[index] - state.q) / script.dt
        result = sim.step(state, u, script.dt)
        state = result.state
        if result.overstretch:
            raise TrajectoryError(f"identification script overstretched the rod at sample {index}")
        if index in marks:
            snapshots.append(state.dlo)
            times.append(state.t)
    return IdObservation(snapshots, times)


__all__ = [
    "IdObservation",
    "IdResult",
    "IdentificationScript",
    "PsoSettings",
    "collect_observations",
    "designed_trajectory",
    "identification_cost",
    "params_from_theta",
    "pso_identify",
    "theta_from_params",
]
