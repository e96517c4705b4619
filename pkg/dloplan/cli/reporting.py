"""``report`` command: aggregate episode logs and planner statistics."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple

import click

from dloplan.cli.common import output_dir, toolkit_config
from dloplan.cli.decorators import safe_command
from dloplan.errors import AggregationError, FormatError
from dloplan.services.metrics import (
    EpisodeMetrics,
    aggregate,
    aggregate_planning,
    planning_time_distribution,
)
from dloplan.services.store import (
    FORMAT_PREFIX,
    dlo_from_dict,
    read_episode_log,
    read_json,
    read_path,
    write_document,
)


logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
DISTRIBUTION_FILE = "planning_times.json"


def collect_inputs(paths: Iterable[str]) -> Tuple[List[Path], List[Path], List[Path]]:
    """Split inputs into episode logs, planner statistics and path dumps; folders are searched."""

    episodes: List[Path] = []
    stats: List[Path] = []
    dumps: List[Path] = []
    for raw in paths:
        path = Path(raw)
        candidates = sorted(path.rglob("*")) if path.is_dir() else [path]
        for candidate in candidates:
            if candidate.suffix == ".jsonl":
                episodes.append(candidate)
            elif candidate.suffix == ".json":
                kind = read_json(candidate).get("format")
                if kind == FORMAT_PREFIX + "planner_stats":
                    stats.append(candidate)
                elif kind == FORMAT_PREFIX + "path":
                    dumps.append(candidate)
    return episodes, stats, dumps


def _episode_geometry(path: Path, steps: List[Dict[str, Any]]) -> Dict[str, Any]:
    return {
        "source": str(path),
        "t": [step["t"] for step in steps],
        "q": [step["q"] for step in steps],
        "feature_points": [dlo_from_dict(step["dlo"]).feature_points for step in steps],
        "tracking_error": [step.get("tracking_error") for step in steps],
    }


def _path_geometry(path: Path) -> Dict[str, Any]:
    _, nodes = read_path(path)
    return {
        "source": str(path),
        "q": [q for _, q in nodes],
        "feature_points": [dlo.feature_points for dlo, _ in nodes],
    }


def format_table(table: Dict[str, Any]) -> List[str]:
    lines = [f"{'group':<40} {'runs':>5} {'success':>8} {'error [mm]':>18} {'collision [s]':>16}"]
    for key, row in table["groups"].items():
        error = row["final_error"]
        collision = row["collision_time"]
        lines.append(
            f"{key:<40} {row['runs']:>5} {row['success_rate'] * 100:>7.1f}% "
            f"{error['mean'] * 1000:>8.2f} ± {error['std'] * 1000:<7.2f} "
            f"{collision['mean']:>6.2f} ± {collision['std']:<6.2f}"
        )
    return lines


@click.command("report")
@click.argument("inputs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(file_okay=False), help="Output folder.")
@click.option("--geometry", is_flag=True, help="Also dump feature-point and joint trajectories for plotting.")
@click.pass_context
@safe_command(label="report")
def report_command(ctx: click.Context, inputs: Tuple[str, ...], out: Optional[str], geometry: bool) -> None:
    """Aggregate episode logs and planner statistics into mean ± std tables."""

    config = toolkit_config(ctx)
    episode_paths, stats_paths, dump_paths = collect_inputs(inputs)
    if not episode_paths and not stats_paths:
        raise AggregationError("no episode logs or planner statistics among the inputs")
    folder = output_dir(config, out, "report")

    records: List[EpisodeMetrics] = []
    geometries: List[Dict[str, Any]] = []
    for path in episode_paths:
        _, steps, summary = read_episode_log(path)
        if summary is None:
            logger.warning("Skipping interrupted episode log %s", path)
            continue
        records.append(EpisodeMetrics.from_mapping(summary))
        if geometry:
            geometries.append(_episode_geometry(path, steps))
    planner_records = [read_json(path) for path in stats_paths]

    report: Dict[str, Any] = {"inputs": len(episode_paths) + len(stats_paths)}
    if records:
        report["episodes"] = aggregate(records)
    if planner_records:
        report["planning"] = aggregate_planning(planner_records)
        times = [float(record["total_time"]) for record in planner_records if record.get("success")]
    else:
        times = [record.planning_time for record in records]
    if not records and not planner_records:
        raise FormatError("none of the episode logs holds a summary")

    write_document(folder / REPORT_FILE, "report", report)
    write_document(folder / DISTRIBUTION_FILE, "planning_time_distribution", {"times": planning_time_distribution(times)})
    if geometry:
        geometries.extend(_path_geometry(path) for path in dump_paths)
        write_document(folder / "geometry.json", "geometry", {"trajectories": geometries})

    if records:
        for line in format_table(report["episodes"]):
            click.echo(line)
    for key, row in report.get("planning", {}).items():
        click.echo(f"planning {key}: {row['successes']}/{row['runs']} solved")
    click.echo(f"Wrote {folder / REPORT_FILE}")


__all__ = ["collect_inputs", "format_table", "report_command"]
