"""Logging setup shared by the command-line tool and the test suite."""

from __future__ import annotations

import atexit
import logging
import sys
from logging.handlers import QueueHandler, QueueListener
from pathlib import Path
from queue import SimpleQueue
from typing import List, Mapping, Optional


# Inner solver loops; SOLVER_LOG_LEVEL governs them separately from the rest.
SOLVER_LOGGERS = (
    "dloplan.services.der_model",
    "dloplan.services.arm_kinematics",
    "dloplan.services.mpc_controller",
)

DEFAULT_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
DEFAULT_DATEFMT = "%Y-%m-%d %H:%M:%S"

_listener: Optional[QueueListener] = None


def level_from_name(name, default: int = logging.INFO) -> int:
    """Map a level name such as ``"debug"`` to its number; unknown names give ``default``."""

    if name is None:
        return default
    level = logging.getLevelName(str(name).upper())
    return level if isinstance(level, int) else default


def _build_handlers(config: Mapping, level: int) -> List[logging.Handler]:
    formatter = logging.Formatter(
        fmt=config.get("LOG_FORMAT") or DEFAULT_FORMAT,
        datefmt=config.get("LOG_DATEFMT") or DEFAULT_DATEFMT,
    )

    # stdout carries command output, so records go to stderr
    stderr_handler = logging.StreamHandler(stream=sys.stderr)
    handlers: List[logging.Handler] = [stderr_handler]

    log_file = config.get("LOG_FILE")
    if log_file:
        path = Path(log_file)
        path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(path, encoding="utf-8"))

    for handler in handlers:
        handler.setLevel(level)
        handler.setFormatter(formatter)
    return handlers


def stop_logging() -> None:
    """Flush pending records and detach the queue from the root logger."""

    global _listener

    if _listener is None:
        return
    _listener.stop()
    _listener = None
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, QueueHandler):
            root.removeHandler(handler)


def configure_logging(toolkit) -> None:
    """Send every record through a queue drained by a background listener.

    Planner and controller loops log from hot paths, so handler I/O runs on
    the listener thread. A second call on a configured toolkit is a no-op.
    """

    global _listener

    if getattr(toolkit, "logging_configured", False):
        return

    config = toolkit.config
    level = level_from_name(config.get("LOG_LEVEL"))
    solver_level = level_from_name(config.get("SOLVER_LOG_LEVEL"), default=max(level, logging.INFO))

    stop_logging()

    queue: SimpleQueue = SimpleQueue()
    queue_handler = QueueHandler(queue)
    queue_handler.setLevel(min(level, solver_level))

    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(queue_handler)
    root.setLevel(level)
    for name in SOLVER_LOGGERS:
        logging.getLogger(name).setLevel(solver_level)

    logging.raiseExceptions = False
    logging.captureWarnings(True)

    handlers = _build_handlers(config, min(level, solver_level))
    _listener = QueueListener(queue, *handlers, respect_handler_level=True)
    _listener.start()

    toolkit.logging_configured = True


atexit.register(stop_logging)


__all__ = ["configure_logging", "level_from_name", "stop_logging", "SOLVER_LOGGERS"]
