"""``run`` command: execute a planned path in the simulator."""

from __future__ import annotations

import logging
from dataclasses import asdict
from typing import Optional

import click

from dloplan.cli.common import (
    episode_rng,
    grid_for,
    load_task_for,
    nodes_from_dump,
    output_dir,
    override_assets,
    planning_context,
    toolkit_config,
)
from dloplan.cli.decorators import safe_command
from dloplan.cli.planning import run_planner
from dloplan.errors import EpisodeFailedError
from dloplan.services.episode import CLOSED_LOOP, MODES, EpisodeSettings, run_episode
from dloplan.services.mpc_controller import MpcSettings
from dloplan.services.planner import path_length
from dloplan.services.quasistatic_sim import PerturbationSpec, perturb_params
from dloplan.services.store import EpisodeLog, write_document
from dloplan.services.tasks import task_summary


logger = logging.getLogger(__name__)

EPISODE_FILE = "episode.jsonl"
METRICS_FILE = "metrics.json"
# Seed streams derived from the task seed.
PERTURB_STREAM = 1
REPLAN_STREAM = 2


@click.command("run")
@click.option("--task", required=True, help="Task file or bundled task name.")
@click.option("--path", "path_file", type=click.Path(exists=True, dir_okay=False), help="Path dump from `plan`.")
@click.option("--mode", type=click.Choice(MODES), default=CLOSED_LOOP, show_default=True)
@click.option("--scene", "scene_file", type=click.Path(exists=True, dir_okay=False), help="Replace the task's scene.")
@click.option("--robot", "robot_file", type=click.Path(exists=True, dir_okay=False), help="Replace the task's robot.")
@click.option("--seed", type=int, help="Override the task seed.")
@click.option("--out", type=click.Path(file_okay=False), help="Output folder.")
@click.option("--params", "params_file", type=click.Path(exists=True, dir_okay=False), help="Identified parameters.")
@click.option("--perturb", is_flag=True, help="Simulate with randomly perturbed rod parameters.")
@click.option("--beta-x", type=click.FloatRange(min=0.0), help="MPC feature tracking weight.")
@click.option("--beta-q", type=click.FloatRange(min=0.0), help="MPC joint tracking weight.")
@click.option("--p-ts", "p_ts", type=click.FloatRange(0.0, 1.0), help="Planner task-space sampling probability.")
@click.pass_context
@safe_command(label="run")
def run_command(
    ctx: click.Context,
    task: str,
    path_file: Optional[str],
    mode: str,
    scene_file: Optional[str],
    robot_file: Optional[str],
    seed: Optional[int],
    out: Optional[str],
    params_file: Optional[str],
    perturb: bool,
    beta_x: Optional[float],
    beta_q: Optional[float],
    p_ts: Optional[float],
) -> None:
    """Execute a path (planned now unless --path is given) and log every control step."""

    config = toolkit_config(ctx)
    spec = override_assets(load_task_for(config, task, params_file, seed), scene_file, robot_file)
    grid = grid_for(config, spec.scene)
    planning_ctx, spec = planning_context(config, spec, grid, p_ts=p_ts)
    folder = output_dir(config, out, f"run-{spec.name}-{mode}-{spec.seed}")

    if path_file:
        _, nodes = nodes_from_dump(planning_ctx, spec, path_file)
        planning_time = 0.0
        feasible_length = smoothed_length = path_length(nodes)
    else:
        result = run_planner(planning_ctx, spec, folder)
        nodes = result.path
        planning_time = result.stats.total_time
        feasible_length = result.stats.feasible_length
        smoothed_length = result.stats.smoothed_length

    true_params = spec.dlo_params
    perturbation = PerturbationSpec.from_config(config) if perturb else PerturbationSpec.identity()
    if not perturbation.is_identity:
        true_params = perturb_params(spec.dlo_params, perturbation, episode_rng(spec.seed, PERTURB_STREAM))

    mpc_settings = MpcSettings.from_config(config, beta_x=beta_x, beta_q=beta_q)
    settings = EpisodeSettings.from_config(config)
    header = {
        "task": task_summary(spec),
        "mode": mode,
        "seed": spec.seed,
        "true_params": true_params.as_dict(),
        "planner_params": spec.planner_params.as_dict(),
        "perturbation": asdict(perturbation),
        "mpc": asdict(mpc_settings),
        "episode": asdict(settings),
        "path_nodes": len(nodes),
    }
    with EpisodeLog(folder / EPISODE_FILE, header) as log:
        outcome = run_episode(
            planning_ctx,
            spec,
            nodes,
            mode,
            true_params,
            mpc_settings,
            settings,
            log,
            planning_time=planning_time,
            feasible_length=feasible_length,
            smoothed_length=smoothed_length,
            rng=episode_rng(spec.seed, REPLAN_STREAM),
        )
        log.close(outcome.metrics.as_dict())
    metrics = outcome.metrics
    write_document(folder / METRICS_FILE, "metrics", metrics.as_dict())

    click.echo(
        f"{spec.name} [{mode}, seed {spec.seed}]: final error {metrics.final_error * 1000:.2f} mm, "
        f"{metrics.execution_time:.1f} s, collision {metrics.collision_time:.1f} s, {metrics.replans} replans"
    )
    click.echo(f"Wrote {folder / EPISODE_FILE}")
    if not metrics.success:
        raise EpisodeFailedError(f"episode failed: {metrics.cause}", cause=metrics.cause)
    click.echo("Success.")


__all__ = ["run_command"]
