"""``plan`` and ``sdf-build`` commands."""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional

import click

from dloplan.cli.common import (
    grid_for,
    load_task_for,
    output_dir,
    override_assets,
    planning_context,
    toolkit_config,
)
from dloplan.cli.decorators import safe_command
from dloplan.errors import PlanningFailedError
from dloplan.services.planner import PlannerStats, PlanningContext, make_node, plan
from dloplan.services.scene_sdf import build_sdf, save_grid
from dloplan.services.store import write_document, write_path
from dloplan.services.tasks import TaskSpec, load_scene, resolve_reference


logger = logging.getLogger(__name__)

PATH_FILE = "path.json"
STATS_FILE = "stats.json"


def variant_label(ctx: PlanningContext, spec: TaskSpec) -> str:
    """Compact description of the planner ablation a run belongs to."""

    params = ctx.params
    return (
        f"p_ts={params.p_ts:g},full_actuated={int(params.full_actuated_steering)},"
        f"stable={int(params.stable_constraint)},goal_q={int(spec.goal_q is not None)}"
    )


def stats_document(ctx: PlanningContext, spec: TaskSpec, stats: PlannerStats) -> Dict[str, Any]:
    document = stats.as_dict()
    document.update(
        {
            "task": spec.name,
            "seed": spec.seed,
            "variant": variant_label(ctx, spec),
            "segment_count": spec.planner_params.segment_count,
        }
    )
    return document


def run_planner(ctx: PlanningContext, spec: TaskSpec, folder: Path):
    """Plan ``spec`` and write the path dump and the statistics document into ``folder``."""

    start = make_node(ctx, spec.start_dlo, spec.start_q)
    try:
        result = plan(ctx, start, spec.goal_dlo, spec.goal_q, spec.rng)
    except PlanningFailedError as exc:
        write_document(folder / STATS_FILE, "planner_stats", stats_document(ctx, spec, exc.stats or PlannerStats()))
        raise
    write_path(folder / PATH_FILE, spec.name, spec.planner_params, result.path, result.feasible_path, spec.seed)
    write_document(folder / STATS_FILE, "planner_stats", stats_document(ctx, spec, result.stats))
    return result


@click.command("plan")
@click.option("--task", required=True, help="Task file or bundled task name.")
@click.option("--scene", "scene_file", type=click.Path(exists=True, dir_okay=False), help="Replace the task's scene.")
@click.option("--robot", "robot_file", type=click.Path(exists=True, dir_okay=False), help="Replace the task's robot.")
@click.option("--seed", type=int, help="Override the task seed.")
@click.option("--out", type=click.Path(file_okay=False), help="Output folder.")
@click.option("--p-ts", "p_ts", type=click.FloatRange(0.0, 1.0), help="Probability of task-space sampling.")
@click.option("--full-actuated-steering", is_flag=True, help="Steer without the rod model (ablation).")
@click.option("--loose-projection", is_flag=True, help="Relax the stable-configuration constraint (ablation).")
@click.option("--unknown-goal-q", is_flag=True, help="Ignore the task's goal joints and root the goal tree by IK.")
@click.option("--max-iter", type=click.IntRange(min=1), help="Planner iteration cap.")
@click.option("--params", "params_file", type=click.Path(exists=True, dir_okay=False), help="Identified parameters.")
@click.pass_context
@safe_command(label="plan")
def plan_command(
    ctx: click.Context,
    task: str,
    scene_file: Optional[str],
    robot_file: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    p_ts: Optional[float],
    full_actuated_steering: bool,
    loose_projection: bool,
    unknown_goal_q: bool,
    max_iter: Optional[int],
    params_file: Optional[str],
) -> None:
    """Plan a path for a task and write the path dump and planner statistics."""

    config = toolkit_config(ctx)
    spec = override_assets(load_task_for(config, task, params_file, seed), scene_file, robot_file)
    if unknown_goal_q:
        spec = replace(spec, goal_q=None)
    grid = grid_for(config, spec.scene)
    planning_ctx, spec = planning_context(
        config,
        spec,
        grid,
        p_ts=p_ts,
        max_iter=max_iter,
        full_actuated_steering=full_actuated_steering,
        stable_constraint=not loose_projection,
    )
    folder = output_dir(config, out, f"plan-{spec.name}-{spec.seed}")
    result = run_planner(planning_ctx, spec, folder)
    stats = result.stats
    click.echo(
        f"Planned {spec.name} (seed {spec.seed}): {len(result.path)} nodes, "
        f"{stats.smoothed_length:.3f} m after smoothing ({stats.feasible_length:.3f} m feasible), "
        f"{stats.iterations} iterations."
    )
    click.echo(f"Wrote {folder / PATH_FILE} and {folder / STATS_FILE}")


@click.command("sdf-build")
@click.option("--scene", required=True, help="Scene file or bundled scene name.")
@click.option("--cell-size", type=click.FloatRange(min=1e-4), help="Voxel edge length in metres.")
@click.option("--out", type=click.Path(dir_okay=False), help="Write the grid here instead of the cache folder.")
@click.pass_context
@safe_command(label="sdf-build")
def sdf_build_command(ctx: click.Context, scene: str, cell_size: Optional[float], out: Optional[str]) -> None:
    """Voxelize a scene into a signed distance grid."""

    config = toolkit_config(ctx)
    scene_obj = load_scene(resolve_reference(scene, Path.cwd(), "scenes"))
    if out:
        grid = build_sdf(scene_obj, float(cell_size or config["SDF_CELL_SIZE"]), int(config["SDF_MAX_VOXELS"]))
        save_grid(grid, Path(out))
        target = out
    else:
        grid = grid_for(config, scene_obj, cell_size)
        target = config.get("SDF_CACHE_DIR")
    nx, ny, nz = grid.dims
    click.echo(f"SDF for {scene_obj.name}: {nx}x{ny}x{nz} voxels of {grid.cell_size:g} m -> {target}")


__all__ = ["plan_command", "run_planner", "sdf_build_command", "stats_document", "variant_label"]
