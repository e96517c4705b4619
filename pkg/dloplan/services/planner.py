"""Constrained bi-directional RRT over paired rod and dual-arm states.

Every tree vertex is a stable rod configuration together with a joint vector
whose grippers hold the rod ends. Steering interpolates toward a target,
re-projects the arms onto the interpolated ends and predicts the rod shape
with the elastic model, so only physically reachable states enter the trees.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional

import numpy as np

from dloplan.errors import (
    InvalidInputError,
    PlanningFailedError,
    ProjectionFailedError,
    SamplingStarvedError,
)
from dloplan.geometry import rotation_distance
from dloplan.services.arm_kinematics import (
    DualArm,
    IkSettings,
    closed_chain_error,
    project_closed_chain,
    random_dual_ik,
)
from dloplan.services.der_model import (
    MAX_TURNING_ANGLE,
    DloConfig,
    DloParams,
    ProjectionSettings,
    dlo_erp,
    forward_pred,
    material_twist_angles,
    project_stable,
    stationarity_residual,
    turning_angles,
    vertical_end_frames,
)
from dloplan.services.profiling import Profiler
from dloplan.services.scene_sdf import CollisionMargins, Scene, SdfGrid, state_collision_free


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PlannerParams:
    step_translation: float = 0.05
    step_rotation: float = 0.2
    step_joint: float = 0.2
    p_ts: float = 0.5
    p_sg: float = 0.1
    n_sg: int = 50
    eps_ar: float = 0.1
    max_iter: int = 50_000
    seed: int = 0
    connect_tolerance: float = 1e-3
    shortcut_attempts: int = 60
    shortcut_time_budget: Optional[float] = None
    full_actuated_steering: bool = False
    stable_constraint: bool = True
    max_extend_steps: int = 200
    sample_retries: int = 50
    sample_ik_attempts: int = 3

    def __post_init__(self) -> None:
        if min(self.step_translation, self.step_rotation, self.step_joint) <= 0.0:
            raise InvalidInputError("steering steps must be positive")
        if not (0.0 <= self.p_ts <= 1.0 and 0.0 <= self.p_sg <= 1.0):
            raise InvalidInputError("probabilities must lie in [0, 1]")
        if self.max_iter <= 0 or self.n_sg < 0 or self.eps_ar <= 0.0:
            raise InvalidInputError("max_iter and eps_ar must be positive, n_sg non-negative")

    @property
    def steps(self) -> np.ndarray:
        return np.array([self.step_translation, self.step_rotation, self.step_joint])

    @classmethod
    def from_config(cls, config: Mapping[str, Any], **overrides: Any) -> "PlannerParams":
        budget = config.get("PLANNER_SHORTCUT_TIME_BUDGET")
        params = cls(
            step_translation=float(config.get("PLANNER_STEP_TRANSLATION", cls.step_translation)),
            step_rotation=float(config.get("PLANNER_STEP_ROTATION", cls.step_rotation)),
            step_joint=float(config.get("PLANNER_STEP_JOINT", cls.step_joint)),
            p_ts=float(config.get("PLANNER_P_TS", cls.p_ts)),
            p_sg=float(config.get("PLANNER_P_SG", cls.p_sg)),
            n_sg=int(config.get("PLANNER_N_SG", cls.n_sg)),
            eps_ar=float(config.get("PLANNER_EPS_AR", cls.eps_ar)),
            max_iter=int(config.get("PLANNER_MAX_ITER", cls.max_iter)),
            connect_tolerance=float(config.get("PLANNER_CONNECT_TOLERANCE", cls.connect_tolerance)),
            shortcut_attempts=int(config.get("PLANNER_SHORTCUT_ATTEMPTS", cls.shortcut_attempts)),
            shortcut_time_budget=None if budget in (None, "") else float(budget),
        )
        return replace(params, **{key: value for key, value in overrides.items() if value is not None})


@dataclass
class PlanningContext:
    """Everything a planning query reads; the profiler is the only mutable part."""

    robot: DualArm
    scene: Scene
    grid: SdfGrid
    dlo_params: DloParams
    params: PlannerParams = field(default_factory=PlannerParams)
    projection: ProjectionSettings = field(default_factory=ProjectionSettings)
    ik: IkSettings = field(default_factory=IkSettings)
    margins: CollisionMargins = field(default_factory=CollisionMargins)
    sampling_min: Optional[np.ndarray] = None
    sampling_max: Optional[np.ndarray] = None
    profiler: Profiler = field(default_factory=Profiler)

    @property
    def steering_projection(self) -> ProjectionSettings:
        if self.params.stable_constraint:
            return self.projection
        return self.projection.loosened()

    @property
    def bounds(self):
        low = self.scene.bounds_min if self.sampling_min is None else self.sampling_min
        high = self.scene.bounds_max if self.sampling_max is None else self.sampling_max
        return np.asarray(low, dtype=float), np.asarray(high, dtype=float)


@dataclass(eq=False)
class PlanNode:
    dlo: DloConfig
    q: Optional[np.ndarray]
    parent: Optional["PlanNode"] = None
    tree_id: int = -1
    spheres: Optional[np.ndarray] = None

    @property
    def features(self) -> np.ndarray:
        return self.dlo.feature_points


def make_node(ctx: PlanningContext, dlo: DloConfig, q: Optional[np.ndarray]) -> PlanNode:
    spheres = None if q is None else ctx.robot.sphere_centers(q)
    return PlanNode(dlo, None if q is None else np.asarray(q, dtype=float), spheres=spheres)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def dist_position(a: DloConfig, b: DloConfig) -> float:
    return float(np.max(np.linalg.norm(a.feature_points - b.feature_points, axis=1)))


def dist_orientation(a: DloConfig, b: DloConfig) -> float:
    return float(np.max(rotation_distance(a.frames, b.frames)))


def node_dist(a: PlanNode, b: PlanNode) -> float:
    """Max of rod and robot-sphere displacement; rod only when a node has no joints."""

    position = dist_position(a.dlo, b.dlo)
    if a.spheres is None or b.spheres is None:
        return position
    workspace = float(np.max(np.linalg.norm(a.spheres - b.spheres, axis=1)))
    return max(position, workspace)


def node_vector_dist(a: PlanNode, b: PlanNode) -> np.ndarray:
    """Position, frame-angle and joint components; the joint part is 0 without joints."""

    joint = 0.0 if a.q is None or b.q is None else float(np.max(np.abs(a.q - b.q)))
    return np.array([dist_position(a.dlo, b.dlo), dist_orientation(a.dlo, b.dlo), joint])


def path_length(nodes: List[PlanNode]) -> float:
    """Mean travel of the feature points along the path."""

    total = 0.0
    for a, b in zip(nodes, nodes[1:]):
        total += float(np.mean(np.linalg.norm(b.features - a.features, axis=1)))
    return total


# ---------------------------------------------------------------------------
# Trees
# ---------------------------------------------------------------------------


class Tree:
    """Vertex list with stacked feature/sphere arrays for linear nearest-neighbour scans."""

    def __init__(self, tree_id: int, segment_count: int, sphere_count: int) -> None:
        self.tree_id = tree_id
        self.nodes: List[PlanNode] = []
        self.roots: List[PlanNode] = []
        self._features = np.empty((64, segment_count, 3))
        self._spheres = np.empty((64, sphere_count, 3))

    def __len__(self) -> int:
        return len(self.nodes)

    def add(self, node: PlanNode, parent: Optional[PlanNode] = None) -> PlanNode:
        if node.spheres is None:
            raise InvalidInputError("tree vertices need a joint configuration")
        index = len(self.nodes)
        if index == self._features.shape[0]:
            self._features = np.concatenate([self._features, np.empty_like(self._features)])
            self._spheres = np.concatenate([self._spheres, np.empty_like(self._spheres)])
        self._features[index] = node.features
        self._spheres[index] = node.spheres
        node.parent = parent
        node.tree_id = self.tree_id
        self.nodes.append(node)
        if parent is None:
            self.roots.append(node)
        return node

    def nearest(self, target: PlanNode, task_space: bool = False) -> PlanNode:
        count = len(self.nodes)
        distance = np.max(np.linalg.norm(self._features[:count] - target.features, axis=2), axis=1)
        if not task_space and target.spheres is not None:
            workspace = np.max(np.linalg.norm(self._spheres[:count] - target.spheres, axis=2), axis=1)
            distance = np.maximum(distance, workspace)
        return self.nodes[int(np.argmin(distance))]


def trace_to_root(node: PlanNode) -> List[PlanNode]:
    chain = []
    current: Optional[PlanNode] = node
    while current is not None:
        chain.append(current)
        current = current.parent
    return chain[::-1]


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def random_broken_line(
    params: DloParams,
    bounds_min: np.ndarray,
    bounds_max: np.ndarray,
    rng: np.random.Generator,
    segments: int = 3,
    max_tries: int = 100,
) -> DloConfig:
    """Coarse rod sample: a broken line of ``segments`` straight pieces, total length L.

    Both grippers point straight up; the headings about the vertical are random.
    """

    m = params.segment_count
    n_edges = m - 1
    spacing = params.edge_length
    groups = min(segments, n_edges)
    rest = np.full(m + 1, spacing)
    for _ in range(max_tries):
        if groups > 1:
            cuts = np.sort(rng.choice(np.arange(1, n_edges), size=groups - 1, replace=False))
        else:
            cuts = np.array([], dtype=int)
        directions = rng.normal(size=(groups, 3))
        directions /= np.linalg.norm(directions, axis=1)[:, None]
        steps = directions[np.searchsorted(cuts, np.arange(n_edges), side="right")] * spacing
        start = rng.uniform(bounds_min, bounds_max)
        features = start + np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
        headings = rng.uniform(-np.pi, np.pi, size=2)
        if np.any(features < bounds_min) or np.any(features > bounds_max):
            continue
        frame_start, frame_end = vertical_end_frames(
            np.array([np.cos(headings[0]), np.sin(headings[0]), 0.0]),
            np.array([np.cos(headings[1]), np.sin(headings[1]), 0.0]),
        )
        vertices = np.vstack(
            [features[0] - spacing * frame_start[:, 0], features, features[-1] + spacing * frame_end[:, 0]]
        )
        if np.any(turning_angles(vertices) > MAX_TURNING_ANGLE):
            continue
        return DloConfig.from_centerline(vertices, frame_start, frame_end, rest)
    raise SamplingStarvedError("could not draw a broken-line rod inside the sampling bounds")


def random_sample_task(ctx: PlanningContext, rng: np.random.Generator) -> PlanNode:
    """Rod-only sample used by the task-space guided exploration."""

    with ctx.profiler.track("sampling"):
        low, high = ctx.bounds
        return make_node(ctx, random_broken_line(ctx.dlo_params, low, high, rng), None)


def random_sample_full(ctx: PlanningContext, rng: np.random.Generator) -> PlanNode:
    """Rod sample plus a random IK solution for both grippers; neither projected nor checked."""

    with ctx.profiler.track("sampling"):
        low, high = ctx.bounds
        for _ in range(ctx.params.sample_retries):
            dlo = random_broken_line(ctx.dlo_params, low, high, rng)
            q = random_dual_ik(ctx.robot, dlo, rng, ctx.params.sample_ik_attempts, ctx.ik)
            if q is not None:
                return make_node(ctx, dlo, q)
        raise SamplingStarvedError("no IK solution for sampled rod configurations")


# ---------------------------------------------------------------------------
# Steering and extension
# ---------------------------------------------------------------------------


def node_is_valid(ctx: PlanningContext, node: PlanNode, stability_slack: float = 10.0) -> Optional[str]:
    """Reason the node violates a tree-vertex invariant, or ``None``."""

    if node.q is None:
        return "node has no joint configuration"
    position, rotation = closed_chain_error(ctx.robot, node.q, node.dlo)
    if position > ctx.ik.position_tolerance or rotation > ctx.ik.rotation_tolerance:
        return f"grippers miss the rod ends by {position:.2e} m / {rotation:.2e} rad"
    tolerance = ctx.projection.stationarity_scale * ctx.dlo_params.bend_stiffness / ctx.dlo_params.total_length
    residual = stationarity_residual(node.dlo, ctx.dlo_params)
    if residual > stability_slack * tolerance:
        return f"rod is not at a stable configuration (residual {residual:.2e})"
    if not state_collision_free(node.dlo, node.q, ctx.robot, ctx.grid, ctx.margins):
        return "node is in collision"
    return None


def constrained_steer(ctx: PlanningContext, start: PlanNode, target: PlanNode) -> Optional[PlanNode]:
    """One bounded step from ``start`` toward ``target``; ``None`` when the step is invalid."""

    task_space = target.q is None
    vector = node_vector_dist(start, target)
    active = vector > 0.0
    if task_space:
        active[2] = False
    if not np.any(active):
        return start
    ratio = min(1.0, float(np.min(ctx.params.steps[active] / vector[active])))
    interpolated = dlo_erp(start.dlo, target.dlo, ratio)
    seed = start.q if task_space else (1.0 - ratio) * start.q + ratio * target.q

    with ctx.profiler.track("closed_chain_projection"):
        q = project_closed_chain(ctx.robot, seed, interpolated, ctx.ik)
    if q is None:
        return None

    settings = ctx.steering_projection
    try:
        with ctx.profiler.track("stable_projection"):
            if ctx.params.full_actuated_steering:
                theta_ref = float(material_twist_angles(start.dlo)[-1])
                dlo = project_stable(interpolated, ctx.dlo_params, settings, theta_ref=theta_ref)
            else:
                dlo = forward_pred(start.dlo, interpolated.end_poses(), ctx.dlo_params, settings)
    except ProjectionFailedError as exc:
        logger.debug("Steering projection rejected: %s", exc)
        return None

    node = make_node(ctx, dlo, q)
    with ctx.profiler.track("collision_check"):
        if not state_collision_free(dlo, q, ctx.robot, ctx.grid, ctx.margins):
            return None
    return node


def extend(ctx: PlanningContext, tree: Tree, start: PlanNode, target: PlanNode) -> PlanNode:
    """Steer repeatedly from ``start`` toward ``target`` and return the last accepted node."""

    tolerance = ctx.params.connect_tolerance
    step_cap = 2.0 * ctx.params.steps
    current = start
    best = node_dist(start, target)
    if best <= tolerance:
        return start
    for _ in range(ctx.params.max_extend_steps):
        candidate = constrained_steer(ctx, current, target)
        if candidate is None or candidate is current:
            return current
        if np.any(node_vector_dist(current, candidate) > step_cap):
            return current
        tree.add(candidate, parent=current)
        distance = node_dist(candidate, target)
        if distance >= best:
            return current
        current, best = candidate, distance
        if distance <= tolerance:
            break
    return current


def add_root(ctx: PlanningContext, tree: Tree, dlo: DloConfig, n_sample: int, rng: np.random.Generator) -> int:
    """Add up to ``n_sample`` goal roots from random IK; near-duplicates are rejected."""

    added = 0
    for _ in range(n_sample):
        q = random_dual_ik(ctx.robot, dlo, rng, 1, ctx.ik)
        if q is None:
            continue
        node = make_node(ctx, dlo, q)
        if any(node_dist(node, root) <= ctx.params.eps_ar for root in tree.roots):
            continue
        with ctx.profiler.track("collision_check"):
            if not state_collision_free(dlo, q, ctx.robot, ctx.grid, ctx.margins):
                continue
        tree.add(node)
        added += 1
    if n_sample and not added:
        logger.debug("add_root found no new goal configuration in %d samples", n_sample)
    return added


# ---------------------------------------------------------------------------
# Planning
# ---------------------------------------------------------------------------


@dataclass
class PlannerStats:
    success: bool = False
    iterations: int = 0
    start_tree_size: int = 0
    goal_tree_size: int = 0
    goal_roots: int = 0
    time_to_feasible: float = 0.0
    smoothing_time: float = 0.0
    feasible_length: float = 0.0
    smoothed_length: float = 0.0
    feasible_nodes: int = 0
    smoothed_nodes: int = 0
    profile: Dict[str, Dict[str, float]] = field(default_factory=dict)

    @property
    def total_time(self) -> float:
        return self.time_to_feasible + self.smoothing_time

    @property
    def projection_fraction(self) -> float:
        if self.time_to_feasible <= 0.0:
            return 0.0
        seconds = sum(
            self.profile.get(name, {}).get("seconds", 0.0)
            for name in ("stable_projection", "closed_chain_projection")
        )
        return min(1.0, seconds / self.time_to_feasible)

    def as_dict(self) -> dict:
        return {
            "success": self.success,
            "iterations": self.iterations,
            "start_tree_size": self.start_tree_size,
            "goal_tree_size": self.goal_tree_size,
            "goal_roots": self.goal_roots,
            "time_to_feasible": self.time_to_feasible,
            "smoothing_time": self.smoothing_time,
            "total_time": self.total_time,
            "projection_fraction": self.projection_fraction,
            "feasible_length": self.feasible_length,
            "smoothed_length": self.smoothed_length,
            "feasible_nodes": self.feasible_nodes,
            "smoothed_nodes": self.smoothed_nodes,
            "profile": self.profile,
        }


@dataclass
class PlanResult:
    path: List[PlanNode]
    feasible_path: List[PlanNode]
    stats: PlannerStats


def join_trees(start_side: PlanNode, goal_side: PlanNode) -> List[PlanNode]:
    """Start-to-goal path through the connecting pair, merged into one node.

    The pair lies within ``connect_tolerance``, so either node can stand in for
    the other and the spliced edge stays within the steering step plus that
    tolerance. A goal root is kept so the path ends on the goal itself;
    otherwise the start-side node replaces its goal-side twin.
    """

    forward = trace_to_root(start_side)
    backward = trace_to_root(goal_side)[::-1]
    if goal_side.parent is None and start_side.parent is not None:
        return forward[:-1] + backward
    return forward + backward[1:]


def plan(
    ctx: PlanningContext,
    start: PlanNode,
    goal_dlo: DloConfig,
    goal_q: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> PlanResult:
    """Bi-directional constrained RRT from ``start`` to the goal rod configuration.

    Without ``goal_q`` the goal tree is rooted at random IK solutions for the
    goal rod ends. Raises ``InvalidInputError`` for an invalid start or goal and
    ``PlanningFailedError`` when ``max_iter`` iterations do not connect the trees.
    """

    params = ctx.params
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    profiler = ctx.profiler
    started = profiler.clock()
    stats = PlannerStats()

    reason = node_is_valid(ctx, start)
    if reason:
        raise InvalidInputError(f"invalid start: {reason}")
    sphere_count = start.spheres.shape[0]
    start_tree = Tree(0, ctx.dlo_params.segment_count, sphere_count)
    goal_tree = Tree(1, ctx.dlo_params.segment_count, sphere_count)
    start_tree.add(start)

    if goal_q is not None:
        goal_node = make_node(ctx, goal_dlo, goal_q)
        reason = node_is_valid(ctx, goal_node)
        if reason:
            raise InvalidInputError(f"invalid goal: {reason}")
        goal_tree.add(goal_node)
        goal_reached = node_dist(start, goal_node) <= params.connect_tolerance
    else:
        goal_reached = dist_position(start.dlo, goal_dlo) <= params.connect_tolerance

    if goal_reached:
        stats.success = True
        stats.start_tree_size = 1
        stats.feasible_nodes = stats.smoothed_nodes = 1
        stats.profile = profiler.as_dict()
        return PlanResult([start], [start], stats)

    if goal_q is None:
        stats.goal_roots += add_root(ctx, goal_tree, goal_dlo, params.n_sg, rng)

    tree_a, tree_b = start_tree, goal_tree
    connection = None
    for iteration in range(1, params.max_iter + 1):
        stats.iterations = iteration
        if goal_q is None:
            if not len(goal_tree):
                stats.goal_roots += add_root(ctx, goal_tree, goal_dlo, params.n_sg, rng)
                if not len(goal_tree):
                    continue
            elif rng.random() < params.p_sg:
                stats.goal_roots += add_root(ctx, goal_tree, goal_dlo, 1, rng)

        task_space = rng.random() < params.p_ts
        try:
            sample = random_sample_task(ctx, rng) if task_space else random_sample_full(ctx, rng)
        except SamplingStarvedError as exc:
            logger.debug("Iteration %d: %s", iteration, exc)
            continue

        with profiler.track("nearest_neighbour"):
            near_a = tree_a.nearest(sample, task_space)
        reach_a = extend(ctx, tree_a, near_a, sample)
        with profiler.track("nearest_neighbour"):
            near_b = tree_b.nearest(reach_a)
        reach_b = extend(ctx, tree_b, near_b, reach_a)
        if node_dist(reach_a, reach_b) <= params.connect_tolerance:
            connection = (reach_a, reach_b) if tree_a is start_tree else (reach_b, reach_a)
            break
        if len(tree_a) > len(tree_b):
            tree_a, tree_b = tree_b, tree_a
        if iteration % 1000 == 0:
            logger.info(
                "Planner iteration %d: %d start / %d goal vertices", iteration, len(start_tree), len(goal_tree)
            )

    stats.start_tree_size = len(start_tree)
    stats.goal_tree_size = len(goal_tree)
    if connection is None:
        stats.time_to_feasible = profiler.clock() - started
        stats.profile = profiler.as_dict()
        raise PlanningFailedError(f"no connection after {params.max_iter} iterations", stats=stats)

    feasible = join_trees(*connection)
    stats.time_to_feasible = profiler.clock() - started
    stats.profile = profiler.as_dict()
    stats.feasible_length = path_length(feasible)
    stats.feasible_nodes = len(feasible)
    logger.info(
        "Feasible path with %d nodes after %d iterations (%.3f m)", len(feasible), stats.iterations, stats.feasible_length
    )

    smoothing_started = profiler.clock()
    smoothed = shorten_path(ctx, feasible, rng)
    stats.smoothing_time = profiler.clock() - smoothing_started
    stats.smoothed_length = path_length(smoothed)
    stats.smoothed_nodes = len(smoothed)
    stats.success = True
    return PlanResult(smoothed, feasible, stats)


def shorten_path(ctx: PlanningContext, path: List[PlanNode], rng: np.random.Generator) -> List[PlanNode]:
    """Random shortcuts re-validated through ``extend``; never lengthens the path."""

    path = list(path)
    if len(path) <= 2:
        return path
    params = ctx.params
    deadline = None
    if params.shortcut_time_budget is not None and ctx.profiler.record_timings:
        deadline = ctx.profiler.clock() + params.shortcut_time_budget
    sphere_count = path[0].spheres.shape[0]
    for _ in range(params.shortcut_attempts):
        if deadline is not None and ctx.profiler.clock() > deadline:
            break
        if len(path) <= 2:
            break
        i, j = sorted(int(index) for index in rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        scratch = Tree(2, ctx.dlo_params.segment_count, sphere_count)
        anchor = PlanNode(path[i].dlo, path[i].q, spheres=path[i].spheres)
        scratch.add(anchor)
        reached = extend(ctx, scratch, anchor, path[j])
        if node_dist(reached, path[j]) > params.connect_tolerance:
            continue
        # reached stands in for path[j]; keep the path node, drop its twin
        segment = trace_to_root(reached)[1:-1]
        candidate = [path[i]] + segment + [path[j]]
        if path_length(candidate) < path_length(path[i : j + 1]) - 1e-12:
            path = path[: i + 1] + segment + path[j:]
    return path


# ---------------------------------------------------------------------------
# Time parametrization
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Waypoint:
    dlo: DloConfig
    q: np.ndarray
    t: float

    @property
    def centerline(self) -> np.ndarray:
        return self.dlo.feature_points


@dataclass
class TimedPlan:
    waypoints: List[Waypoint]
    dt: float

    def __len__(self) -> int:
        return len(self.waypoints)

    @property
    def duration(self) -> float:
        return self.waypoints[-1].t if self.waypoints else 0.0

    def window(self, index: int, horizon: int):
        """Reference feature points and joints for the ``horizon`` steps after ``index``."""

        last = len(self.waypoints) - 1
        picks = [self.waypoints[min(index + i, last)] for i in range(1, horizon + 1)]
        return np.stack([w.centerline for w in picks]), np.stack([w.q for w in picks])


def time_parametrize(
    path: List[PlanNode],
    dt: float = 0.2,
    u_max: float = 0.5,
    feature_speed: float = 0.1,
) -> TimedPlan:
    """Subdivide the path so each ``dt`` step respects the joint and feature speed caps."""

    if not path:
        raise InvalidInputError("cannot time an empty path")
    waypoints = [Waypoint(path[0].dlo, np.array(path[0].q), 0.0)]
    for a, b in zip(path, path[1:]):
        joint_steps = float(np.max(np.abs(b.q - a.q))) / (u_max * dt)
        feature_steps = dist_position(a.dlo, b.dlo) / (feature_speed * dt)
        count = max(1, math.ceil(max(joint_steps, feature_steps) - 1e-9))
        for step in range(1, count + 1):
            eta = step / count
            waypoints.append(
                Waypoint(dlo_erp(a.dlo, b.dlo, eta), (1.0 - eta) * a.q + eta * b.q, len(waypoints) * dt)
            )
    return TimedPlan(waypoints, dt)


__all__ = [
    "PlanNode",
    "PlanResult",
    "PlannerParams",
    "PlannerStats",
    "PlanningContext",
    "TimedPlan",
    "Tree",
    "Waypoint",
    "add_root",
    "constrained_steer",
    "dist_orientation",
    "dist_position",
    "extend",
    "join_trees",
    "make_node",
    "node_dist",
    "node_is_valid",
    "node_vector_dist",
    "path_length",
    "plan",
    "random_broken_line",
    "random_sample_full",
    "random_sample_task",
    "shorten_path",
    "time_parametrize",
    "trace_to_root",
]
