"""Helpers shared by the command modules."""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple

import click
import numpy as np

from dloplan.errors import ConfigurationError, FormatError, InvalidInputError
from dloplan.services.arm_kinematics import IkSettings
from dloplan.services.der_model import DloParams, ProjectionSettings
from dloplan.services.planner import PlanNode, PlannerParams, PlanningContext, dist_position, make_node
from dloplan.services.profiling import Profiler
from dloplan.services.scene_sdf import CollisionMargins, Scene, SdfGrid, build_sdf, load_grid, save_grid
from dloplan.services.store import read_identified_params, read_json, read_path
from dloplan.services.tasks import IDENTIFY, TaskSpec, bundled_path, load_robot, load_scene, load_task, resolve_joints


logger = logging.getLogger(__name__)

# Start of a stored path and the task start may differ by round-off only.
PATH_START_TOLERANCE = 1e-3


def toolkit_config(ctx: click.Context) -> Dict[str, Any]:
    return ctx.find_root().obj.config


def task_reference(task: str) -> Path:
    path = Path(task)
    return path if path.is_file() else bundled_path("tasks", task)


def base_params(task_path: Path) -> DloParams:
    """Rod parameters declared by a task document, before any identification."""

    return DloParams.from_mapping(read_json(task_path).get("dlo", {}))


def load_task_for(
    config: Mapping[str, Any],
    task: str,
    params_file: Optional[str] = None,
    seed: Optional[int] = None,
) -> TaskSpec:
    """Load a task, plugging in identified planner parameters when given."""

    task_path = task_reference(task)
    planner_params = None
    if params_file:
        planner_params = read_identified_params(Path(params_file), base_params(task_path))
    try:
        spec = load_task(task_path, planner_params, ProjectionSettings.from_config(config))
    except ConfigurationError as exc:
        if read_json(task_path).get("planner_dlo") == IDENTIFY:
            raise ConfigurationError(f"{exc} (run `identify` and pass --params)") from exc
        raise
    return spec.with_seed(seed)


def override_assets(spec: TaskSpec, scene_file: Optional[str], robot_file: Optional[str]) -> TaskSpec:
    """Swap the task's scene or robot for the ones given on the command line."""

    if scene_file:
        spec = replace(spec, scene=load_scene(Path(scene_file)))
    if robot_file:
        robot = load_robot(Path(robot_file))
        if robot.n_joints != spec.robot.n_joints and spec.start_q is not None:
            raise InvalidInputError("robot override changes the joint count of a task with given joints")
        spec = replace(spec, robot=robot)
    return spec


def grid_cache_path(config: Mapping[str, Any], scene: Scene, cell_size: float) -> Optional[Path]:
    folder = config.get("SDF_CACHE_DIR")
    if not folder:
        return None
    return Path(folder) / f"{scene.name}-{scene.digest()[:16]}-{cell_size:g}.npz"


def grid_for(config: Mapping[str, Any], scene: Scene, cell_size: Optional[float] = None) -> SdfGrid:
    """Cached SDF grid whose scene digest matches, else a freshly built (and cached) one."""

    cell_size = float(cell_size or config.get("SDF_CELL_SIZE", 0.01))
    cache = grid_cache_path(config, scene, cell_size)
    digest = scene.digest()
    if cache is not None and cache.is_file():
        try:
            grid = load_grid(cache)
        except FormatError as exc:
            logger.warning("Ignoring unreadable SDF cache %s: %s", cache, exc)
        else:
            if grid.scene_digest == digest and abs(grid.cell_size - cell_size) < 1e-12:
                logger.debug("Reusing SDF cache %s", cache)
                return grid
            logger.info("SDF cache %s is stale; rebuilding", cache)
    grid = build_sdf(scene, cell_size, int(config.get("SDF_MAX_VOXELS", 50_000_000)))
    if cache is not None:
        save_grid(grid, cache)
    return grid


def margins_for(params: DloParams) -> CollisionMargins:
    return CollisionMargins.for_rod(params.diameter)


def planning_context(
    config: Mapping[str, Any],
    spec: TaskSpec,
    grid: SdfGrid,
    **planner_overrides: Any,
) -> Tuple[PlanningContext, TaskSpec]:
    """Planning context for ``spec`` plus the task with its start joints resolved."""

    ik = IkSettings.from_config(config)
    margins = margins_for(spec.planner_params)
    params = PlannerParams.from_config(config, seed=spec.seed, **planner_overrides)
    ctx = PlanningContext(
        robot=spec.robot,
        scene=spec.scene,
        grid=grid,
        dlo_params=spec.planner_params,
        params=params,
        projection=ProjectionSettings.from_config(config),
        ik=ik,
        margins=margins,
        sampling_min=spec.sampling_min,
        sampling_max=spec.sampling_max,
        profiler=Profiler(bool(config.get("RECORD_TIMINGS", True))),
    )
    return ctx, resolve_joints(spec, grid, margins, ik)


def nodes_from_dump(ctx: PlanningContext, spec: TaskSpec, path_file: str) -> Tuple[Dict[str, Any], List[PlanNode]]:
    """Plan nodes from a path dump, checked against the task start."""

    header, pairs = read_path(Path(path_file))
    if pairs[0][0].segment_count != spec.planner_params.segment_count:
        raise InvalidInputError("path dump and task use different rod discretizations")
    if any(q.shape != (spec.robot.n_joints,) for _, q in pairs):
        raise InvalidInputError("every path node needs a full joint vector")
    nodes = [make_node(ctx, dlo, q) for dlo, q in pairs]
    gap = dist_position(nodes[0].dlo, spec.start_dlo)
    if gap > PATH_START_TOLERANCE:
        raise InvalidInputError(f"path does not start at the task start ({gap:.4f} m away)")
    return header, nodes


def episode_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator per purpose, all derived from the task seed."""

    return np.random.default_rng((int(seed), int(stream)))


def output_dir(config: Mapping[str, Any], out: Optional[str], name: str) -> Path:
    folder = Path(out) if out else Path(config.get("OUTPUT_DIR") or ".") / name
    folder.mkdir(parents=True, exist_ok=True)
    return folder


__all__ = [
    "base_params",
    "episode_rng",
    "grid_for",
    "load_task_for",
    "margins_for",
    "nodes_from_dump",
    "output_dir",
    "override_assets",
    "planning_context",
    "task_reference",
    "toolkit_config",
]
