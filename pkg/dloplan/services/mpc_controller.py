"""Receding-horizon tracking of a timed plan.

Each control step solves a short-horizon program over joint velocities by
sequential linearization: the rod transition uses the current feature-point
Jacobian chained with the arm Jacobians, obstacle clearance is linearized
through the SDF gradient, and every quadratic subproblem goes to OSQP.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import osqp
from scipy import sparse

from dloplan.errors import DimensionMismatchError, InvalidInputError
from dloplan.services.arm_kinematics import DualArm
from dloplan.services.dlo_jacobian import DloJacobian
from dloplan.services.scene_sdf import SdfGrid


logger = logging.getLogger(__name__)

SOLVED = "solved"
DEGRADED = "degraded"
INFEASIBLE = "infeasible"

_ACCEPTED_QP = ("solved", "solved inaccurate")


@dataclass(frozen=True)
class MpcSettings:
    horizon: int = 3
    dt: float = 0.2
    beta_x: float = 10.0
    beta_q: float = 1.0
    beta_u: float = 0.1
    beta_a: float = 0.1
    clearance: float = 0.01
    stretch_margin: float = 0.01
    u_max: float = 0.5
    max_outer: int = 5
    step_tolerance: float = 1e-4
    trust_radius: float = 0.5
    min_trust_radius: float = 1e-4
    slack_weight: float = 1e4
    slack_tolerance: float = 1e-4
    time_budget: Optional[float] = None
    eps_abs: float = 1e-7
    eps_rel: float = 1e-7
    qp_max_iter: int = 10_000
    # Diagonal weight matrices; ``None`` means identity.
    w_x: Optional[Tuple[float, ...]] = None
    w_q: Optional[Tuple[float, ...]] = None
    w_u: Optional[Tuple[float, ...]] = None
    w_a: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise InvalidInputError("MPC horizon must be at least 1")
        if not self.u_max > 0.0 or not self.dt > 0.0:
            raise InvalidInputError("u_max and dt must be positive")
        if min(self.beta_x, self.beta_q, self.beta_u, self.beta_a) < 0.0:
            raise InvalidInputError("MPC weights must be non-negative")

    @classmethod
    def from_config(cls, config: Mapping[str, Any], **overrides: Any) -> "MpcSettings":
        budget = config.get("MPC_TIME_BUDGET")
        values = dict(
            horizon=int(config.get("MPC_HORIZON", cls.horizon)),
            dt=float(config.get("MPC_DT", cls.dt)),
            beta_x=float(config.get("MPC_BETA_X", cls.beta_x)),
            beta_q=float(config.get("MPC_BETA_Q", cls.beta_q)),
            beta_u=float(config.get("MPC_BETA_U", cls.beta_u)),
            beta_a=float(config.get("MPC_BETA_A", cls.beta_a)),
            clearance=float(config.get("MPC_CLEARANCE", cls.clearance)),
            stretch_margin=float(config.get("MPC_STRETCH_MARGIN", cls.stretch_margin)),
            u_max=float(config.get("MPC_U_MAX", cls.u_max)),
            max_outer=int(config.get("MPC_MAX_OUTER", cls.max_outer)),
            time_budget=None if budget in (None, "") else float(budget),
        )
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)


@dataclass(eq=False)
class MpcProblem:
    """One control step: current state plus the next ``horizon`` reference samples."""

    settings: MpcSettings
    x_ref: np.ndarray
    q_ref: np.ndarray
    x: np.ndarray
    q: np.ndarray
    u_prev: np.ndarray
    rod_length: float
    dlo_radius: float = 0.007

    def __post_init__(self) -> None:
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        self.q_ref = np.asarray(self.q_ref, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.u_prev = np.asarray(self.u_prev, dtype=float)
        horizon = self.settings.horizon
        if self.x_ref.shape != (horizon,) + self.x.shape:
            raise DimensionMismatchError(f"x_ref must have shape {(horizon,) + self.x.shape}")
        if self.q_ref.shape != (horizon,) + self.q.shape or self.u_prev.shape != self.q.shape:
            raise DimensionMismatchError("joint reference and previous command must match q")


class ControlOutput(NamedTuple):
    u0: np.ndarray
    status: str
    margins: Dict[str, float]
    iterations: int
    controls: np.ndarray
    predicted_x: np.ndarray
    predicted_q: np.ndarray
    max_slack: float


def interpolation_matrix(segment_count: int) -> np.ndarray:
    """Scalar weights mapping feature points to the ``3 (m - 1) + 1`` rod collision spheres."""

    rows = 3 * (segment_count - 1) + 1
    weights = np.zeros((rows, segment_count))
    for k in range(segment_count - 1):
        for offset, fraction in enumerate((0.0, 1.0 / 3.0, 2.0 / 3.0)):
            weights[3 * k + offset, k] = 1.0 - fraction
            weights[3 * k + offset, k + 1] = fraction
    weights[-1, -1] = 1.0
    return weights


class _Layout:
    """Offsets of the stacked decision vector ``[u, q, x, xi, xc, s_xi, s_c]``."""

    def __init__(self, horizon: int, n: int, m: int, n_spheres: int, n_rod: int) -> None:
        self.horizon, self.n, self.m, self.n_spheres, self.n_rod = horizon, n, m, n_spheres, n_rod
        sizes = [
            ("u", n),
            ("q", n),
            ("x", 3 * m),
            ("xi", 3 * n_spheres),
            ("xc", 3 * n_rod),
            ("s_xi", n_spheres),
            ("s_c", n_rod),
        ]
        self.offset: Dict[str, int] = {}
        self.width: Dict[str, int] = {}
        cursor = 0
        for name, width in sizes:
            self.offset[name] = cursor
            self.width[name] = width
            cursor += horizon * width
        self.size = cursor

    def at(self, name: str, step: int) -> int:
        return self.offset[name] + step * self.width[name]

    def block(self, name: str, step: int) -> slice:
        start = self.at(name, step)
        return slice(start, start + self.width[name])


class _Rows:
    """COO accumulator for the constraint matrix and its bounds."""

    def __init__(self, columns: int) -> None:
        self.columns = columns
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []
        self.lower: List[np.ndarray] = []
        self.upper: List[np.ndarray] = []
        self.count = 0

    def reserve(self, count: int, lower, upper) -> int:
        start = self.count
        self.lower.append(np.broadcast_to(np.asarray(lower, dtype=float), (count,)).copy())
        self.upper.append(np.broadcast_to(np.asarray(upper, dtype=float), (count,)).copy())
        self.count += count
        return start

    def put(self, row: int, col: int, block: np.ndarray) -> None:
        block = np.atleast_2d(block)
        r, c = np.nonzero(block)
        self.rows.append(r + row)
        self.cols.append(c + col)
        self.vals.append(block[r, c])

    def identity(self, row: int, col: int, size: int, scale: float = 1.0) -> None:
        index = np.arange(size)
        self.rows.append(index + row)
        self.cols.append(index + col)
        self.vals.append(np.full(size, scale))

    def build(self):
        matrix = sparse.csc_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.count, self.columns),
        )
        return matrix, np.concatenate(self.lower), np.concatenate(self.upper)


def _weights(values: Optional[Sequence[float]], size: int) -> np.ndarray:
    if values is None:
        return np.ones(size)
    weights = np.asarray(values, dtype=float)
    if weights.shape != (size,) or np.any(weights < 0.0):
        raise InvalidInputError(f"diagonal weights need {size} non-negative entries")
    return weights


class _Rollout(NamedTuple):
    q: np.ndarray
    x: np.ndarray
    transitions: List[np.ndarray]


def _rollout(problem: MpcProblem, controls: np.ndarray, jacobian: DloJacobian, robot: DualArm) -> _Rollout:
    """Integrate joints exactly and features through the chained Jacobian."""

    dt = problem.settings.dt
    qs = [problem.q]
    xs = [problem.x.ravel()]
    transitions = []
    for u in controls:
        transition = jacobian.matrix @ robot.stacked_jacobian(qs[-1])
        transitions.append(transition)
        xs.append(xs[-1] + dt * transition @ u)
        qs.append(qs[-1] + dt * u)
    return _Rollout(np.array(qs), np.array(xs), transitions)


def _tracking_cost(problem: MpcProblem, controls: np.ndarray, rollout: _Rollout) -> float:
    s = problem.settings
    n = problem.q.size
    w_x = _weights(s.w_x, problem.x.size)
    w_q = _weights(s.w_q, n)
    w_u = _weights(s.w_u, n)
    w_a = _weights(s.w_a, n)
    x_err = rollout.x[1:] - problem.x_ref.reshape(s.horizon, -1)
    q_err = rollout.q[1:] - problem.q_ref
    accel = np.diff(np.vstack([problem.u_prev, controls]), axis=0) / s.dt
    return float(
        s.beta_x * np.sum(w_x * x_err**2)
        + s.beta_q * np.sum(w_q * q_err**2)
        + s.beta_u * np.sum(w_u * controls**2)
        + s.beta_a * np.sum(w_a * accel**2)
    )


def _margins(problem: MpcProblem, rollout: _Rollout, robot: DualArm, grid: SdfGrid, rod_weights: np.ndarray) -> Dict[str, float]:
    """Smallest predicted clearances over the horizon (positive means satisfied)."""

    robot_gap = dlo_gap = np.inf
    stretch = np.inf
    limit = problem.rod_length - problem.settings.stretch_margin
    for q, x in zip(rollout.q[1:], rollout.x[1:]):
        centers = robot.sphere_centers(q)
        robot_gap = min(robot_gap, float(np.min(grid.query(centers) - robot.sphere_radii)))
        features = x.reshape(-1, 3)
        rod = rod_weights @ features
        dlo_gap = min(dlo_gap, float(np.min(grid.query(rod) - problem.dlo_radius)))
        stretch = min(stretch, limit - float(np.linalg.norm(features[-1] - features[0])))
    return {"robot_clearance": robot_gap, "dlo_clearance": dlo_gap, "stretch": stretch}


def constraint_violations(margins: Mapping[str, float], settings: MpcSettings) -> List[str]:
    """Names of the hard constraints the predicted trajectory misses by more than ``slack_tolerance``."""

    floor = settings.clearance - settings.slack_tolerance
    violated = [name for name in ("robot_clearance", "dlo_clearance") if margins[name] < floor]
    if margins["stretch"] < -settings.slack_tolerance:
        violated.append("stretch")
    return violated


def _merit(problem: MpcProblem, controls, jacobian, robot, grid, rod_weights) -> Tuple[float, _Rollout]:
    rollout = _rollout(problem, controls, jacobian, robot)
    margins = _margins(problem, rollout, robot, grid, rod_weights)
    eps = problem.settings.clearance
    violation = (
        max(0.0, eps - margins["robot_clearance"])
        + max(0.0, eps - margins["dlo_clearance"])
        + max(0.0, -margins["stretch"])
    )
    return _tracking_cost(problem, controls, rollout) + problem.settings.slack_weight * violation, rollout


def _assemble_qp(
    problem: MpcProblem,
    nominal: np.ndarray,
    rollout: _Rollout,
    robot: DualArm,
    grid: SdfGrid,
    rod_weights: np.ndarray,
    trust: float,
):
    s = problem.settings
    T, dt = s.horizon, s.dt
    n = problem.q.size
    m = problem.x.shape[0]
    n_spheres = robot.sphere_radii.size
    n_rod = rod_weights.shape[0]
    layout = _Layout(T, n, m, n_spheres, n_rod)
    lam = np.kron(rod_weights, np.eye(3))

    # Objective: 0.5 z^T P z + c^T z.
    diag = np.zeros(layout.size)
    linear = np.zeros(layout.size)
    w_x = _weights(s.w_x, 3 * m)
    w_q = _weights(s.w_q, n)
    w_u = _weights(s.w_u, n)
    w_a = _weights(s.w_a, n) * s.beta_a / dt**2
    x_ref = problem.x_ref.reshape(T, -1)
    for i in range(T):
        diag[layout.block("x", i)] = 2.0 * s.beta_x * w_x
        linear[layout.block("x", i)] = -2.0 * s.beta_x * w_x * x_ref[i]
        diag[layout.block("q", i)] = 2.0 * s.beta_q * w_q
        linear[layout.block("q", i)] = -2.0 * s.beta_q * w_q * problem.q_ref[i]
        diag[layout.block("u", i)] = 2.0 * s.beta_u * w_u
    slack_start = layout.offset["s_xi"]
    diag[slack_start:] = 2.0
    linear[slack_start:] = s.slack_weight
    difference = sparse.eye(T * n) - sparse.eye(T * n, k=-n)
    accel = difference.T @ sparse.diags(np.tile(2.0 * w_a, T)) @ difference
    padding = sparse.csc_matrix((layout.size - T * n, layout.size - T * n))
    hessian = sparse.diags(diag) + sparse.block_diag([accel, padding])
    u_span = slice(layout.offset["u"], layout.offset["u"] + T * n)
    linear[layout.block("u", 0)] += -2.0 * w_a * problem.u_prev
    hessian = sparse.triu(hessian.tocsc(), format="csc")

    rows = _Rows(layout.size)
    eye_n = np.eye(n)
    for i in range(T):
        start = rows.reserve(n, problem.q if i == 0 else 0.0, problem.q if i == 0 else 0.0)
        rows.identity(start, layout.at("q", i), n)
        if i > 0:
            rows.identity(start, layout.at("q", i - 1), n, -1.0)
        rows.put(start, layout.at("u", i), -dt * eye_n)

        x0 = problem.x.ravel()
        start = rows.reserve(3 * m, x0 if i == 0 else 0.0, x0 if i == 0 else 0.0)
        rows.identity(start, layout.at("x", i), 3 * m)
        if i > 0:
            rows.identity(start, layout.at("x", i - 1), 3 * m, -1.0)
        rows.put(start, layout.at("u", i), -dt * rollout.transitions[i])

        q_nom = rollout.q[i + 1]
        centers, sphere_jac = robot.sphere_jacobian(q_nom)
        affine = centers.ravel() - sphere_jac @ q_nom
        start = rows.reserve(3 * n_spheres, affine, affine)
        rows.identity(start, layout.at("xi", i), 3 * n_spheres)
        rows.put(start, layout.at("q", i), -sphere_jac)

        start = rows.reserve(3 * n_rod, 0.0, 0.0)
        rows.identity(start, layout.at("xc", i), 3 * n_rod)
        rows.put(start, layout.at("x", i), -lam)

        distance, gradient = grid.query(centers, with_gradient=True)
        bound = s.clearance + robot.sphere_radii - distance + np.einsum("ij,ij->i", gradient, centers)
        start = rows.reserve(n_spheres, bound, np.inf)
        for j in range(n_spheres):
            rows.put(start + j, layout.at("xi", i) + 3 * j, gradient[j])
        rows.identity(start, layout.at("s_xi", i), n_spheres)

        rod_nominal = (lam @ rollout.x[i + 1]).reshape(-1, 3)
        distance, gradient = grid.query(rod_nominal, with_gradient=True)
        bound = s.clearance + problem.dlo_radius - distance + np.einsum("ij,ij->i", gradient, rod_nominal)
        start = rows.reserve(n_rod, bound, np.inf)
        for j in range(n_rod):
            rows.put(start + j, layout.at("xc", i) + 3 * j, gradient[j])
        rows.identity(start, layout.at("s_c", i), n_rod)

        features = rollout.x[i + 1].reshape(-1, 3)
        chord = features[-1] - features[0]
        norm = np.linalg.norm(chord)
        if norm > 1e-9:
            direction = chord / norm
            start = rows.reserve(1, -np.inf, problem.rod_length - s.stretch_margin)
            rows.put(start, layout.at("x", i), direction[None, :] * -1.0)
            rows.put(start, layout.at("x", i) + 3 * (m - 1), direction[None, :])

        u_nom = nominal[i]
        start = rows.reserve(
            n, np.maximum(-s.u_max, u_nom - trust), np.minimum(s.u_max, u_nom + trust)
        )
        rows.identity(start, layout.at("u", i), n)
        start = rows.reserve(n, robot.lower, robot.upper)
        rows.identity(start, layout.at("q", i), n)

    slack_count = T * (n_spheres + n_rod)
    start = rows.reserve(slack_count, 0.0, np.inf)
    rows.identity(start, slack_start, slack_count)
    constraint, lower, upper = rows.build()

    guess = np.zeros(layout.size)
    guess[u_span] = nominal.ravel()
    for i in range(T):
        guess[layout.block("q", i)] = rollout.q[i + 1]
        guess[layout.block("x", i)] = rollout.x[i + 1]
        guess[layout.block("xi", i)] = robot.sphere_centers(rollout.q[i + 1]).ravel()
        guess[layout.block("xc", i)] = lam @ rollout.x[i + 1]
    return layout, hessian, linear, constraint, lower, upper, guess


def solve_mpc(
    problem: MpcProblem,
    jacobian: DloJacobian,
    grid: SdfGrid,
    robot: DualArm,
    warm_start: Optional[np.ndarray] = None,
) -> ControlOutput:
    """Sequential QP solve; ``u0`` is always clipped to ``[-u_max, u_max]``."""

    s = problem.settings
    T = s.horizon
    n = problem.q.size
    if jacobian.segment_count != problem.x.shape[0]:
        raise DimensionMismatchError("Jacobian and feature points disagree on the segment count")
    rod_weights = interpolation_matrix(problem.x.shape[0])
    controls = np.zeros((T, n)) if warm_start is None else np.clip(np.asarray(warm_start, dtype=float), -s.u_max, s.u_max)
    if controls.shape != (T, n):
        raise DimensionMismatchError(f"warm start must have shape {(T, n)}")

    started = time.perf_counter()
    merit, rollout = _merit(problem, controls, jacobian, robot, grid, rod_weights)
    trust = s.trust_radius
    status = SOLVED
    max_slack = 0.0
    accepted = 0
    iterations = 0
    for iterations in range(1, s.max_outer + 1):
        if s.time_budget is not None and time.perf_counter() - started > s.time_budget:
            status = DEGRADED
            logger.warning("MPC time budget exhausted after %d iterations", iterations - 1)
            break
        layout, hessian, linear, constraint, lower, upper, guess = _assemble_qp(
            problem, controls, rollout, robot, grid, rod_weights, trust
        )
        solver = osqp.OSQP()
        solver.setup(
            hessian,
            linear,
            constraint,
            lower,
            upper,
            verbose=False,
            eps_abs=s.eps_abs,
            eps_rel=s.eps_rel,
            max_iter=s.qp_max_iter,
            polish=True,
            warm_start=True,
        )
        solver.warm_start(x=guess)
        result = solver.solve()
        qp_status = str(result.info.status)
        if qp_status not in _ACCEPTED_QP or result.x is None or not np.all(np.isfinite(result.x)):
            if accepted == 0:
                logger.warning("MPC subproblem failed (%s); halting the arms", qp_status)
                return _halt(problem, rollout, robot, grid, rod_weights, iterations)
            status = DEGRADED
            break
        if qp_status != "solved":
            status = DEGRADED
        candidate = result.x[layout.offset["u"] : layout.offset["u"] + T * n].reshape(T, n)
        candidate = np.clip(candidate, -s.u_max, s.u_max)
        candidate_merit, candidate_rollout = _merit(problem, candidate, jacobian, robot, grid, rod_weights)
        if candidate_merit <= merit + 1e-9 or accepted == 0 and iterations == s.max_outer:
            step = float(np.max(np.abs(candidate - controls)))
            controls, rollout, merit = candidate, candidate_rollout, candidate_merit
            max_slack = float(np.max(result.x[layout.offset["s_xi"] :], initial=0.0))
            accepted += 1
            if step < s.step_tolerance:
                break
        else:
            trust *= 0.5
            if trust < s.min_trust_radius:
                break

    if accepted == 0:
        status = DEGRADED
    if max_slack > s.slack_tolerance:
        status = DEGRADED
        logger.warning("MPC needed constraint slack %.3g", max_slack)
    margins = _margins(problem, rollout, robot, grid, rod_weights)
    violated = constraint_violations(margins, s)
    if violated and status == SOLVED:
        status = DEGRADED
        logger.warning("MPC prediction violates %s", ", ".join(violated))
    return ControlOutput(
        np.clip(controls[0], -s.u_max, s.u_max),
        status,
        margins,
        iterations,
        controls,
        rollout.x[1:].reshape(T, -1, 3),
        rollout.q[1:],
        max_slack,
    )


def _halt(problem, rollout, robot, grid, rod_weights, iterations) -> ControlOutput:
    s = problem.settings
    n = problem.q.size
    controls = np.zeros((s.horizon, n))
    still = _Rollout(np.tile(problem.q, (s.horizon + 1, 1)), np.tile(problem.x.ravel(), (s.horizon + 1, 1)), [])
    return ControlOutput(
        np.zeros(n),
        INFEASIBLE,
        _margins(problem, still, robot, grid, rod_weights),
        iterations,
        controls,
        still.x[1:].reshape(s.horizon, -1, 3),
        still.q[1:],
        0.0,
    )


@dataclass
class MpcController:
    """Per-episode controller state: warm start and telemetry of the last solve."""

    robot: DualArm
    grid: SdfGrid
    settings: MpcSettings
    rod_length: float
    dlo_radius: float = 0.007
    _previous: Optional[np.ndarray] = field(default=None, repr=False)

    def reset(self) -> None:
        self._previous = None

    def step(
        self,
        x: np.ndarray,
        q: np.ndarray,
        u_prev: np.ndarray,
        x_ref: np.ndarray,
        q_ref: np.ndarray,
        jacobian: DloJacobian,
    ) -> ControlOutput:
        problem = MpcProblem(self.settings, x_ref, q_ref, x, q, u_prev, self.rod_length, self.dlo_radius)
        warm = None
        if self._previous is not None:
            warm = np.vstack([self._previous[1:], self._previous[-1:]])
        output = solve_mpc(problem, jacobian, self.grid, self.robot, warm)
        self._previous = None if output.status == INFEASIBLE else output.controls
        return output


def detect_stuck(
    history: Sequence[Tuple[np.ndarray, float]],
    window: int = 10,
    speed_threshold: float = 0.01,
    error_threshold: float = 0.02,
) -> bool:
    """True when the last ``window`` commands are near zero while the error stays large."""

    if len(history) < window:
        return False
    recent = history[-window:]
    return all(
        float(np.max(np.abs(u), initial=0.0)) < speed_threshold and error > error_threshold for u, error in recent
    )


def detect_rapid_change(
    feature_velocities: np.ndarray,
    end_speed: float,
    gain: float = 5.0,
    floor: float = 0.05,
) -> bool:
    """True when some feature point moves much faster than the grasped ends."""

    speeds = np.linalg.norm(np.asarray(feature_velocities, dtype=float).reshape(-1, 3), axis=1)
    return bool(np.max(speeds, initial=0.0) > gain * end_speed + floor)


__all__ = [
    "DEGRADED",
    "INFEASIBLE",
    "SOLVED",
    "ControlOutput",
    "MpcController",
    "MpcProblem",
    "MpcSettings",
    "constraint_violations",
    "detect_rapid_change",
    "detect_stuck",
    "interpolation_matrix",
    "solve_mpc",
]
