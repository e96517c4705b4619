"""Decorators for command safety and exit codes."""

from __future__ import annotations

import logging
import sys
from functools import wraps
from typing import Any, Callable, Optional

import click

from dloplan.errors import (
    AggregationError,
    ConfigurationError,
    DimensionMismatchError,
    DloplanError,
    EpisodeFailedError,
    FormatError,
    InvalidInputError,
    PlanningFailedError,
)


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_PLANNING_FAILED = 2
EXIT_EPISODE_FAILED = 3
EXIT_USAGE = 64

_USAGE_ERRORS = (FormatError, InvalidInputError, ConfigurationError, AggregationError, DimensionMismatchError)


def _fail(code: int, message: str) -> None:
    click.echo(f"Error: {message}", err=True)
    sys.exit(code)


def safe_command(
    func: Optional[Callable[..., Any]] = None,
    *,
    label: Optional[str] = None,
) -> Callable[[Callable[..., Any]], Callable[..., Any]]:
    """Wrap a command so toolkit errors become stable exit codes.

    Parameters
    ----------
    label:
        Name used in log messages; defaults to the wrapped function's name.
    """

    def decorator(fn: Callable[..., Any]) -> Callable[..., Any]:
        name = label or fn.__name__

        @wraps(fn)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            try:
                return fn(*args, **kwargs)
            except click.ClickException:
                raise
            except PlanningFailedError as exc:
                logger.warning("%s: planning failed: %s", name, exc)
                _fail(EXIT_PLANNING_FAILED, str(exc) or "planning failed")
            except EpisodeFailedError as exc:
                logger.warning("%s: episode failed (%s): %s", name, exc.cause, exc)
                _fail(EXIT_EPISODE_FAILED, str(exc) or "episode failed")
            except _USAGE_ERRORS as exc:
                logger.warning("%s: %s", name, exc)
                _fail(EXIT_USAGE, str(exc) or "invalid input")
            except DloplanError as exc:
                logger.error("%s: %s", name, exc)
                _fail(EXIT_UNEXPECTED, str(exc))
            except Exception as exc:  # pragma: no cover - fallback
                logger.exception("Unhandled error in command %s", name)
                _fail(EXIT_UNEXPECTED, str(exc) or "unexpected error")

        return wrapper

    if func is not None:
        return decorator(func)

    return decorator


__all__ = [
    "EXIT_EPISODE_FAILED",
    "EXIT_OK",
    "EXIT_PLANNING_FAILED",
    "EXIT_UNEXPECTED",
    "EXIT_USAGE",
    "safe_command",
]
