"""Execute a planned path against the simulator in one of three modes.

``open-loop`` replays the planned joints. ``open-loop-replan`` replays but
replans when the rod changes shape abruptly. ``closed-loop`` tracks the plan
with the MPC, adapts the feature-point Jacobian online and replans when the
controller gets stuck.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from dloplan.errors import (
    InvalidInputError,
    JacobianEstimationError,
    PlanningFailedError,
    ProjectionFailedError,
    SimulationFaultError,
)
from dloplan.services.der_model import DloParams, project_stable
from dloplan.services.dlo_jacobian import DloJacobian, adapt, estimate_jacobian
from dloplan.services.metrics import EpisodeMetrics, is_success, task_error
from dloplan.services.mpc_controller import (
    INFEASIBLE,
    MpcController,
    MpcSettings,
    detect_rapid_change,
    detect_stuck,
)
from dloplan.services.planner import PlanNode, PlanningContext, TimedPlan, make_node, plan, time_parametrize
from dloplan.services.quasistatic_sim import SimState, Simulator
from dloplan.services.store import EpisodeLog, dlo_to_dict
from dloplan.services.tasks import TaskSpec


logger = logging.getLogger(__name__)

OPEN_LOOP = "open-loop"
OPEN_LOOP_REPLAN = "open-loop-replan"
CLOSED_LOOP = "closed-loop"
MODES = (OPEN_LOOP, OPEN_LOOP_REPLAN, CLOSED_LOOP)


@dataclass(frozen=True)
class EpisodeSettings:
    time_limit: float = 180.0
    replan_budget: int = 3
    jacobian_refresh: int = 10
    forgetting: float = 0.5
    perturbation_delta: float = 1e-3
    feature_speed: float = 0.1
    settle_steps: int = 25
    settle_speed: float = 1e-3
    stuck_window: int = 10

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "EpisodeSettings":
        return cls(
            time_limit=float(config.get("EPISODE_TIME_LIMIT", cls.time_limit)),
            replan_budget=int(config.get("EPISODE_REPLAN_BUDGET", cls.replan_budget)),
            jacobian_refresh=int(config.get("JACOBIAN_REFRESH_STEPS", cls.jacobian_refresh)),
            forgetting=float(config.get("JACOBIAN_FORGETTING", cls.forgetting)),
            perturbation_delta=float(config.get("JACOBIAN_DELTA", cls.perturbation_delta)),
            feature_speed=float(config.get("PLAN_FEATURE_SPEED", cls.feature_speed)),
            settle_steps=int(config.get("EPISODE_SETTLE_STEPS", cls.settle_steps)),
        )


class EpisodeOutcome(NamedTuple):
    metrics: EpisodeMetrics
    final_state: SimState
    steps: int


def _finite(values: Mapping[str, float]) -> Dict[str, Optional[float]]:
    return {key: (float(value) if math.isfinite(value) else None) for key, value in values.items()}


def _reference_error(state: SimState, timed: TimedPlan, index: int) -> float:
    reference = timed.waypoints[index].centerline
    return float(np.max(np.linalg.norm(state.dlo.feature_points - reference, axis=1)))


def _replan(
    ctx: PlanningContext,
    task: TaskSpec,
    state: SimState,
    rng: np.random.Generator,
) -> Tuple[Optional[List[PlanNode]], float]:
    """New path from the current state; ``None`` when no path is found."""

    started = ctx.profiler.clock()
    try:
        dlo = project_stable(state.dlo, ctx.dlo_params, ctx.projection)
        result = plan(ctx, make_node(ctx, dlo, state.q), task.goal_dlo, task.goal_q, rng)
    except (PlanningFailedError, InvalidInputError, ProjectionFailedError) as exc:
        logger.warning("Replanning failed: %s", exc)
        return None, ctx.profiler.clock() - started
    return result.path, result.stats.total_time


def run_episode(
    ctx: PlanningContext,
    task: TaskSpec,
    path: List[PlanNode],
    mode: str,
    true_params: DloParams,
    mpc_settings: Optional[MpcSettings] = None,
    settings: Optional[EpisodeSettings] = None,
    log: Optional[EpisodeLog] = None,
    planning_time: float = 0.0,
    feasible_length: float = 0.0,
    smoothed_length: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> EpisodeOutcome:
    """Drive the simulator along ``path`` and score the result.

    Simulation faults, overstretching and an exhausted replanning budget end the
    episode early and are recorded as the failure cause.
    """

    if mode not in MODES:
        raise InvalidInputError(f"unknown episode mode {mode!r}; expected one of {', '.join(MODES)}")
    if not path:
        raise InvalidInputError("episode needs a non-empty path")
    mpc_settings = mpc_settings or MpcSettings()
    settings = settings or EpisodeSettings()
    rng = rng if rng is not None else np.random.default_rng(task.seed)
    robot = ctx.robot
    dt = mpc_settings.dt
    closed = mode == CLOSED_LOOP
    goal = task.goal_dlo.feature_points

    timed = time_parametrize(path, dt, mpc_settings.u_max, settings.feature_speed)
    sim = Simulator(robot, ctx.grid, true_params, ctx.projection)
    cause = ""
    try:
        state = sim.reset(path[0].dlo, path[0].q)
    except SimulationFaultError as exc:
        logger.warning("Episode cannot start: %s", exc)
        state = SimState(np.array(path[0].q, dtype=float), path[0].dlo, 0.0)
        cause = "simulation_fault"

    controller = None
    jacobian: Optional[DloJacobian] = None
    if closed and not cause:
        controller = MpcController(robot, ctx.grid, mpc_settings, ctx.dlo_params.total_length, ctx.margins.dlo_radius)
        try:
            jacobian = estimate_jacobian(state.dlo, ctx.dlo_params, settings.perturbation_delta, ctx.projection)
        except JacobianEstimationError as exc:
            logger.warning("Initial Jacobian estimate failed: %s", exc)
            cause = "jacobian"

    index = 0
    u_prev = np.zeros(robot.n_joints)
    history: List[Tuple[np.ndarray, float]] = []
    replans = 0
    collision_time = 0.0
    overstretched = False
    settled = 0
    step = 0
    max_steps = int(math.floor(settings.time_limit / dt + 1e-9))

    while not cause and step < max_steps:
        last = len(timed) - 1
        x = state.dlo.feature_points
        margins: Dict[str, float] = {}
        if closed:
            x_ref, q_ref = timed.window(index, mpc_settings.horizon)
            output = controller.step(x, state.q, u_prev, x_ref, q_ref, jacobian)
            u, status, margins = output.u0, output.status, output.margins
        else:
            if index >= last:
                break
            u = np.clip((timed.waypoints[index + 1].q - state.q) / dt, -mpc_settings.u_max, mpc_settings.u_max)
            status = "replay"

        try:
            result = sim.step(state, u, dt)
        except SimulationFaultError as exc:
            logger.warning("Episode aborted: %s", exc)
            cause = "simulation_fault"
            break
        step += 1
        displacement = result.state.dlo.feature_points - x
        end_twist = robot.stacked_jacobian(state.q) @ u
        if result.collision:
            collision_time += dt

        if closed:
            jacobian = adapt(jacobian, end_twist, displacement, dt, settings.forgetting)
            if step % settings.jacobian_refresh == 0:
                try:
                    jacobian = estimate_jacobian(result.state.dlo, ctx.dlo_params, settings.perturbation_delta, ctx.projection)
                except JacobianEstimationError as exc:
                    logger.debug("Keeping the adapted Jacobian: %s", exc)

        state = result.state
        index = min(index + 1, last)
        tracking = _reference_error(state, timed, index)
        if log is not None:
            log.record(
                {
                    "step": step,
                    "t": state.t,
                    "q": state.q,
                    "u": u,
                    "status": status,
                    "tracking_error": tracking,
                    "task_error": task_error(state.dlo.feature_points, goal),
                    "margins": _finite(margins),
                    "flags": list(result.flags),
                    "reference_index": index,
                    "dlo": dlo_to_dict(state.dlo),
                }
            )
        if result.overstretch:
            overstretched = True
            cause = "overstretch"
            break
        history.append((u, tracking))

        if mode != OPEN_LOOP:
            end_speed = max(np.linalg.norm(end_twist[0:3]), np.linalg.norm(end_twist[6:9]))
            trigger = None
            if detect_stuck(history, settings.stuck_window):
                trigger = "stuck"
            elif detect_rapid_change(displacement / dt, end_speed):
                trigger = "rapid_change"
            elif closed and status == INFEASIBLE:
                trigger = "infeasible"
            if trigger:
                if replans >= settings.replan_budget:
                    cause = "replan_budget"
                    break
                replans += 1
                logger.warning("Replanning (%s) at t=%.1f s, attempt %d", trigger, state.t, replans)
                new_path, spent = _replan(ctx, task, state, rng)
                planning_time += spent
                if new_path is None:
                    cause = "replan_failed"
                    break
                timed = time_parametrize(new_path, dt, mpc_settings.u_max, settings.feature_speed)
                index = 0
                history.clear()
                settled = 0
                if controller is not None:
                    controller.reset()

        u_prev = u
        if closed and index == len(timed) - 1:
            settled += 1
            if settled >= settings.settle_steps or float(np.max(np.abs(u))) < settings.settle_speed:
                break

    final_error = task_error(state.dlo.feature_points, goal)
    success = not cause and is_success(final_error, state.t, overstretched)
    if not success and not cause:
        cause = "time_limit" if step >= max_steps else "task_error"
    metrics = EpisodeMetrics(
        task=task.name,
        mode=mode,
        seed=task.seed,
        segment_count=task.dlo_params.segment_count,
        success=success,
        final_error=final_error,
        collision_time=collision_time,
        execution_time=state.t,
        replans=replans,
        planning_time=planning_time,
        feasible_length=feasible_length,
        smoothed_length=smoothed_length,
        overstretched=overstretched,
        cause=cause,
    )
    logger.info(
        "Episode %s/%s: %s, final error %.4f m after %.1f s, %d replans",
        task.name,
        mode,
        "success" if success else f"failed ({cause})",
        final_error,
        state.t,
        replans,
    )
    return EpisodeOutcome(metrics, state, step)


__all__ = [
    "CLOSED_LOOP",
    "EpisodeOutcome",
    "EpisodeSettings",
    "MODES",
    "OPEN_LOOP",
    "OPEN_LOOP_REPLAN",
    "run_episode",
]
