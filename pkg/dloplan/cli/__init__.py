from __future__ import annotations

from typing import Any

import click

from dloplan import create_toolkit
from dloplan.cli.decorators import EXIT_USAGE

from .episodes import run_command
from .identification import identify_command
from .planning import plan_command, sdf_build_command
from .reporting import report_command


class DloplanGroup(click.Group):
    """Command group whose usage errors exit with ``EXIT_USAGE``."""

    def make_context(self, *args: Any, **kwargs: Any) -> click.Context:
        try:
            return super().make_context(*args, **kwargs)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except click.UsageError as exc:
            exc.exit_code = EXIT_USAGE
            raise


@click.group(cls=DloplanGroup)
@click.option("--config", "config_name", default=None, help="Config class (dotted path); defaults to DLOPLAN_CONFIG.")
@click.pass_context
def cli(ctx: click.Context, config_name: str) -> None:
    """Plan and execute dual-arm manipulation of deformable linear objects."""

    if config_name or ctx.obj is None:
        ctx.obj = create_toolkit(config_name)


cli.add_command(plan_command)
cli.add_command(run_command)
cli.add_command(identify_command)
cli.add_command(report_command)
cli.add_command(sdf_build_command)

__all__ = ["cli"]
