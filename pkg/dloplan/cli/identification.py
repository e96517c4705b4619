"""``identify`` command: estimate the rod's stiffness and density ratios."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import click

from dloplan.cli.common import (
    base_params,
    episode_rng,
    grid_for,
    output_dir,
    task_reference,
    toolkit_config,
)
from dloplan.cli.decorators import safe_command
from dloplan.services.arm_kinematics import IkSettings
from dloplan.services.der_model import ProjectionSettings
from dloplan.services.identification import (
    IdObservation,
    PsoSettings,
    collect_observations,
    designed_trajectory,
    pso_identify,
    theta_from_params,
)
from dloplan.services.quasistatic_sim import PerturbationSpec, Simulator, perturb_params
from dloplan.services.store import read_observations, write_document, write_observations
from dloplan.services.tasks import load_task


logger = logging.getLogger(__name__)

OBSERVATIONS_FILE = "observations.json"
RESULT_FILE = "identification.json"
PERTURB_STREAM = 1
SCRIPT_STREAM = 3


@click.command("identify")
@click.option("--task", required=True, help="Task whose robot and rod are identified.")
@click.option("--seed", type=int, help="Override the task seed.")
@click.option("--out", type=click.Path(file_okay=False), help="Output folder.")
@click.option(
    "--observations",
    "observations_file",
    type=click.Path(exists=True, dir_okay=False),
    help="Use recorded snapshots instead of running the scripted motion.",
)
@click.option("--perturb", is_flag=True, help="Record the script on a rod with perturbed parameters.")
@click.option("--particles", type=click.IntRange(min=1), help="Swarm size.")
@click.option("--iterations", type=click.IntRange(min=0), help="Swarm iterations.")
@click.option("--dry-run", is_flag=True, help="Skip the scripted motion; no snapshots are collected.")
@click.pass_context
@safe_command(label="identify")
def identify_command(
    ctx: click.Context,
    task: str,
    seed: Optional[int],
    out: Optional[str],
    observations_file: Optional[str],
    perturb: bool,
    particles: Optional[int],
    iterations: Optional[int],
    dry_run: bool,
) -> None:
    """Drive the identification script, then fit the ratios with a particle swarm."""

    config = toolkit_config(ctx)
    task_path = task_reference(task)
    base = base_params(task_path)
    projection = ProjectionSettings.from_config(config)
    spec = load_task(task_path, base, projection).with_seed(seed)
    folder = output_dir(config, out, f"identify-{spec.name}-{spec.seed}")

    true_params = spec.dlo_params
    if perturb:
        true_params = perturb_params(spec.dlo_params, PerturbationSpec.from_config(config), episode_rng(spec.seed, PERTURB_STREAM))

    if observations_file:
        observations = read_observations(Path(observations_file))
    elif dry_run:
        observations = IdObservation([])
    else:
        grid = grid_for(config, spec.scene)
        script = designed_trajectory(
            spec.robot,
            true_params,
            dt=float(config.get("MPC_DT", 0.2)),
            u_max=float(config.get("MPC_U_MAX", 0.5)),
            rng=episode_rng(spec.seed, SCRIPT_STREAM),
            ik=IkSettings.from_config(config),
        )
        sim = Simulator(spec.robot, grid, true_params, projection)
        observations = collect_observations(sim, script)
        write_observations(folder / OBSERVATIONS_FILE, observations, true_params)

    settings = PsoSettings.from_config(config, particles=particles, iterations=iterations, seed=spec.seed)
    result = pso_identify(observations, base, settings, projection)
    document = result.as_dict()
    document.update(
        {
            "task": spec.name,
            "seed": spec.seed,
            "snapshots": len(observations),
            "base_params": base.as_dict(),
            "true_log_ratios": theta_from_params(true_params).tolist(),
        }
    )
    write_document(folder / RESULT_FILE, "identification", document)
    click.echo(
        f"Identified {spec.name}: twist/bend {result.twist_ratio:.4g}, density/bend {result.density_ratio:.4g} "
        f"(cost {result.cost:.3g} over {len(observations)} snapshots)"
    )
    click.echo(f"Wrote {folder / RESULT_FILE}")


__all__ = ["identify_command"]
