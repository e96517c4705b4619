"""Planning and control of deformable linear objects with two arms."""

import os
from os import fspath
from typing import Any, Dict

from .logging_config import configure_logging


__version__ = "0.1.0"


def _ensure_directory(path) -> None:
    """Create directory if it does not exist."""
    resolved_path = fspath(path)
    if resolved_path and not os.path.exists(resolved_path):
        os.makedirs(resolved_path, exist_ok=True)


def _load_object(config_class) -> Dict[str, Any]:
    """UPPER_CASE attributes of a config class or of its dotted import path."""

    if isinstance(config_class, str):
        module_name, _, attribute = config_class.rpartition(".")
        module = __import__(module_name, fromlist=[attribute])
        config_class = getattr(module, attribute)
    return {key: getattr(config_class, key) for key in dir(config_class) if key.isupper()}


class Toolkit:
    """Configured entry point shared by the CLI commands."""

    def __init__(self, config: Dict[str, Any]) -> None:
        self.config = config
        self.logging_configured = False


def create_toolkit(config_class=None, **overrides: Any) -> Toolkit:
    """Toolkit factory: load the config class, set up logging and output folders."""

    if config_class is None:
        config_class = "config.BaseConfig"

    config = _load_object(config_class)
    config.update(overrides)
    toolkit = Toolkit(config)

    configure_logging(toolkit)

    for key in ("OUTPUT_DIR", "SDF_CACHE_DIR"):
        folder = config.get(key)
        if folder:
            _ensure_directory(folder)

    return toolkit


__all__ = ["Toolkit", "create_toolkit", "__version__"]
