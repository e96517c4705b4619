"""Task, scene and robot ingestion, including the bundled data set."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np

from dloplan.errors import ConfigurationError, FormatError, InvalidInputError, ProjectionFailedError
from dloplan.services.arm_kinematics import DualArm, IkSettings, closed_chain_error, random_dual_ik
from dloplan.services.der_model import DloConfig, DloParams, ProjectionSettings, arch_config, project_stable
from dloplan.services.scene_sdf import CollisionMargins, Scene, SdfGrid, state_collision_free
from dloplan.services.store import FORMAT_PREFIX, FORMAT_VERSION, dlo_from_dict, read_json


logger = logging.getLogger(__name__)

DATA_ROOT = Path(__file__).resolve().parent.parent / "data"
TASK_FORMAT = FORMAT_PREFIX + "task"
IDENTIFY = "identify"


@dataclass(frozen=True, eq=False)
class TaskSpec:
    name: str
    source: Optional[Path]
    scene: Scene
    robot: DualArm
    dlo_params: DloParams
    planner_params: DloParams
    start_dlo: DloConfig
    goal_dlo: DloConfig
    start_q: Optional[np.ndarray] = None
    goal_q: Optional[np.ndarray] = None
    seed: int = 0
    sampling_min: Optional[np.ndarray] = None
    sampling_max: Optional[np.ndarray] = None
    identify_first: bool = False

    @property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def with_seed(self, seed: Optional[int]) -> "TaskSpec":
        return self if seed is None else replace(self, seed=int(seed))


def bundled_path(kind: str, name: str) -> Path:
    """Location of a bundled ``robots``/``scenes``/``tasks`` document."""

    return DATA_ROOT / kind / (name if name.endswith(".json") else f"{name}.json")


def resolve_reference(reference: str, base_dir: Optional[Path], kind: str) -> Path:
    candidates = []
    if base_dir is not None:
        candidates.append(Path(base_dir) / reference)
    candidates.append(DATA_ROOT / reference)
    candidates.append(bundled_path(kind, reference))
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    raise FormatError(f"cannot find {kind[:-1]} file {reference!r}")


def load_scene(path: Path) -> Scene:
    return Scene.from_mapping(read_json(path))


def load_robot(path: Path) -> DualArm:
    return DualArm.from_mapping(read_json(path))


def _vector_or_none(value: Any, size: Optional[int] = None) -> Optional[np.ndarray]:
    if value is None:
        return None
    array = np.asarray(value, dtype=float)
    if array.ndim != 1 or (size is not None and array.size != size):
        raise FormatError(f"expected a vector of {size} numbers")
    return array


def _build_config(entry: Mapping[str, Any], params: DloParams) -> DloConfig:
    if "arch" in entry:
        arch = entry["arch"]
        return arch_config(
            np.asarray(arch["left"], dtype=float),
            np.asarray(arch["heading"], dtype=float),
            float(arch["separation"]),
            params,
            float(arch.get("roll_left", 0.0)),
            float(arch.get("roll_right", 0.0)),
        )
    if "dlo" in entry:
        cfg = dlo_from_dict(entry["dlo"])
        if cfg.segment_count != params.segment_count:
            raise FormatError("serialized rod does not match the task discretization")
        return cfg
    raise FormatError("a start/goal entry needs an 'arch' or a 'dlo' field")


def _project(cfg: DloConfig, params: DloParams, settings: ProjectionSettings, label: str) -> DloConfig:
    try:
        return project_stable(cfg, params, settings)
    except ProjectionFailedError as exc:
        raise InvalidInputError(f"{label} configuration is not stabilizable: {exc}") from exc


def task_from_mapping(
    payload: Mapping[str, Any],
    base_dir: Optional[Path] = None,
    planner_params: Optional[DloParams] = None,
    projection: Optional[ProjectionSettings] = None,
    source: Optional[Path] = None,
) -> TaskSpec:
    """Parse a task document; start and goal rods are projected under the planner parameters."""

    if payload.get("format") != TASK_FORMAT or payload.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported task document (format {payload.get('format')!r})")
    projection = projection or ProjectionSettings()
    try:
        scene = load_scene(resolve_reference(str(payload["scene"]), base_dir, "scenes"))
        robot = load_robot(resolve_reference(str(payload["robot"]), base_dir, "robots"))
        dlo_params = DloParams.from_mapping(payload.get("dlo", {}))
        planner_entry = payload.get("planner_dlo")
        identify_first = planner_entry == IDENTIFY
        if planner_params is None:
            if identify_first:
                raise ConfigurationError("this task plans with identified parameters; pass an identification result")
            planner_params = dlo_params if planner_entry is None else DloParams.from_mapping(planner_entry)
        if planner_params.segment_count != dlo_params.segment_count:
            raise ConfigurationError("planner and rod discretizations differ")
        start_entry, goal_entry = payload["start"], payload["goal"]
        start = _project(_build_config(start_entry, planner_params), planner_params, projection, "start")
        goal = _project(_build_config(goal_entry, planner_params), planner_params, projection, "goal")
        bounds = payload.get("sampling_bounds") or {}
        n = robot.n_joints
        task = TaskSpec(
            name=str(payload.get("name", "task")),
            source=source,
            scene=scene,
            robot=robot,
            dlo_params=dlo_params,
            planner_params=planner_params,
            start_dlo=start,
            goal_dlo=goal,
            start_q=_vector_or_none(start_entry.get("q"), n),
            goal_q=_vector_or_none(goal_entry.get("q"), n),
            seed=int(payload.get("seed", 0)),
            sampling_min=_vector_or_none(bounds.get("min"), 3),
            sampling_max=_vector_or_none(bounds.get("max"), 3),
            identify_first=identify_first,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed task document: {exc}") from exc
    logger.debug("Loaded task %s (scene %s, robot %s)", task.name, scene.name, robot.name)
    return task


def load_task(
    path: Path,
    planner_params: Optional[DloParams] = None,
    projection: Optional[ProjectionSettings] = None,
) -> TaskSpec:
    path = Path(path)
    if not path.is_file():
        path = bundled_path("tasks", str(path))
    return task_from_mapping(read_json(path), path.parent, planner_params, projection, source=path)


def resolve_joints(
    task: TaskSpec,
    grid: SdfGrid,
    margins: CollisionMargins,
    ik: Optional[IkSettings] = None,
    attempts: int = 50,
) -> TaskSpec:
    """Fill a missing start joint vector with a seeded, collision-free IK solution.

    Given joint vectors are checked against the closed-chain tolerance. A
    missing goal vector stays ``None``; the planner roots its goal tree itself.
    """

    ik = ik or IkSettings()
    rng = task.rng
    for label, q, cfg in (("start", task.start_q, task.start_dlo), ("goal", task.goal_q, task.goal_dlo)):
        if q is None:
            continue
        position, rotation = closed_chain_error(task.robot, q, cfg)
        if position > ik.position_tolerance or rotation > ik.rotation_tolerance:
            raise InvalidInputError(f"{label} joints do not hold the {label} rod ({position:.2e} m, {rotation:.2e} rad)")
    if task.start_q is not None:
        return task
    for _ in range(attempts):
        q = random_dual_ik(task.robot, task.start_dlo, rng, settings=ik)
        if q is not None and state_collision_free(task.start_dlo, q, task.robot, grid, margins):
            logger.debug("Resolved start joints for task %s", task.name)
            return replace(task, start_q=q)
    raise InvalidInputError(f"no collision-free IK solution for the start of task {task.name}")


def task_summary(task: TaskSpec) -> Dict[str, Any]:
    return {
        "name": task.name,
        "scene": task.scene.name,
        "robot": task.robot.name,
        "seed": task.seed,
        "segment_count": task.dlo_params.segment_count,
        "goal_q_given": task.goal_q is not None,
    }


__all__ = [
    "DATA_ROOT",
    "IDENTIFY",
    "TaskSpec",
    "bundled_path",
    "load_robot",
    "load_scene",
    "load_task",
    "resolve_joints",
    "resolve_reference",
    "task_from_mapping",
    "task_summary",
]
