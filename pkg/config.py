import logging
import os
from pathlib import Path
from typing import Optional, Tuple


BASE_DIR = Path(__file__).resolve().parent
ENV_PREFIX = "DLOPLAN_"


def _env(name: str) -> Optional[str]:
    value = os.getenv(ENV_PREFIX + name)
    if value is None or not value.strip():
        return None
    return value.strip()


def _warn_invalid(name: str, raw: str, default) -> None:
    logging.getLogger(__name__).warning(
        "Ignoring invalid %s%s=%r; using the default %r.", ENV_PREFIX, name, raw, default
    )


def _env_float(name: str, default: float, minimum: Optional[float] = None) -> float:
    """Return the float stored in ``DLOPLAN_<name>`` or ``default`` if missing or invalid."""

    raw = _env(name)
    if raw is None:
        return default
    try:
        value = float(raw)
    except ValueError:
        _warn_invalid(name, raw, default)
        return default
    if minimum is not None and value < minimum:
        _warn_invalid(name, raw, default)
        return default
    return value


def _env_int(name: str, default: int, minimum: Optional[int] = None) -> int:
    raw = _env(name)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError:
        _warn_invalid(name, raw, default)
        return default
    if minimum is not None and value < minimum:
        _warn_invalid(name, raw, default)
        return default
    return value


def _env_bool(name: str, default: bool) -> bool:
    raw = _env(name)
    if raw is None:
        return default
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    _warn_invalid(name, raw, default)
    return default


def _env_optional_float(name: str, default: Optional[float] = None) -> Optional[float]:
    raw = _env(name)
    if raw is None:
        return default
    if raw.lower() == "none":
        return None
    try:
        return float(raw)
    except ValueError:
        _warn_invalid(name, raw, default)
        return default


def _env_range(name: str, default: Tuple[float, float]) -> Tuple[float, float]:
    """``low,high`` pair, e.g. ``DLOPLAN_PERTURB_TWIST_RANGE=0.8,1.25``."""

    raw = _env(name)
    if raw is None:
        return default
    try:
        low, high = (float(part) for part in raw.split(","))
    except ValueError:
        _warn_invalid(name, raw, default)
        return default
    if not 0.0 < low <= high:
        _warn_invalid(name, raw, default)
        return default
    return low, high


class BaseConfig:
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE")
    SOLVER_LOG_LEVEL = os.getenv("SOLVER_LOG_LEVEL")
    LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
    LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"

    OUTPUT_DIR = _env("OUTPUT_DIR") or str(BASE_DIR / "runs")
    SDF_CACHE_DIR = _env("SDF_CACHE_DIR") or str(BASE_DIR / "runs" / "sdf")
    SDF_CELL_SIZE = _env_float("SDF_CELL_SIZE", 0.01, minimum=1e-4)
    SDF_MAX_VOXELS = _env_int("SDF_MAX_VOXELS", 50_000_000, minimum=8)
    RECORD_TIMINGS = _env_bool("RECORD_TIMINGS", True)

    PROJECTION_PENALTY_SCALE = _env_float("PROJECTION_PENALTY_SCALE", 1e4, minimum=0.0)
    PROJECTION_STATIONARITY_SCALE = _env_float("PROJECTION_STATIONARITY_SCALE", 1e-8, minimum=0.0)
    PROJECTION_LENGTH_TOLERANCE_SCALE = _env_float("PROJECTION_LENGTH_TOLERANCE_SCALE", 1e-4, minimum=0.0)
    PROJECTION_MAX_ITER = _env_int("PROJECTION_MAX_ITER", 500, minimum=1)
    PROJECTION_MAX_DOUBLINGS = _env_int("PROJECTION_MAX_DOUBLINGS", 6, minimum=0)
    PROJECTION_NEWTON_STEPS = _env_int("PROJECTION_NEWTON_STEPS", 4, minimum=0)

    IK_POSITION_TOLERANCE = _env_float("IK_POSITION_TOLERANCE", 1e-4, minimum=0.0)
    IK_ROTATION_TOLERANCE = _env_float("IK_ROTATION_TOLERANCE", 1e-3, minimum=0.0)
    IK_DAMPING = _env_float("IK_DAMPING", 1e-6, minimum=0.0)
    IK_STEP_CLAMP = _env_float("IK_STEP_CLAMP", 0.2, minimum=0.0)
    IK_MAX_ITER = _env_int("IK_MAX_ITER", 100, minimum=1)
    IK_ATTEMPTS = _env_int("IK_ATTEMPTS", 20, minimum=1)

    PLANNER_STEP_TRANSLATION = _env_float("PLANNER_STEP_TRANSLATION", 0.05, minimum=0.0)
    PLANNER_STEP_ROTATION = _env_float("PLANNER_STEP_ROTATION", 0.2, minimum=0.0)
    PLANNER_STEP_JOINT = _env_float("PLANNER_STEP_JOINT", 0.2, minimum=0.0)
    PLANNER_P_TS = _env_float("PLANNER_P_TS", 0.5, minimum=0.0)
    PLANNER_P_SG = _env_float("PLANNER_P_SG", 0.1, minimum=0.0)
    PLANNER_N_SG = _env_int("PLANNER_N_SG", 50, minimum=1)
    PLANNER_EPS_AR = _env_float("PLANNER_EPS_AR", 0.1, minimum=0.0)
    PLANNER_MAX_ITER = _env_int("PLANNER_MAX_ITER", 50_000, minimum=1)
    PLANNER_CONNECT_TOLERANCE = _env_float("PLANNER_CONNECT_TOLERANCE", 1e-3, minimum=0.0)
    PLANNER_SHORTCUT_ATTEMPTS = _env_int("PLANNER_SHORTCUT_ATTEMPTS", 60, minimum=0)
    PLANNER_SHORTCUT_TIME_BUDGET = _env_optional_float("PLANNER_SHORTCUT_TIME_BUDGET")
    PLAN_FEATURE_SPEED = _env_float("PLAN_FEATURE_SPEED", 0.1, minimum=1e-6)

    MPC_HORIZON = _env_int("MPC_HORIZON", 3, minimum=1)
    MPC_DT = _env_float("MPC_DT", 0.2, minimum=1e-6)
    MPC_BETA_X = _env_float("MPC_BETA_X", 10.0, minimum=0.0)
    MPC_BETA_Q = _env_float("MPC_BETA_Q", 1.0, minimum=0.0)
    MPC_BETA_U = _env_float("MPC_BETA_U", 0.1, minimum=0.0)
    MPC_BETA_A = _env_float("MPC_BETA_A", 0.1, minimum=0.0)
    MPC_CLEARANCE = _env_float("MPC_CLEARANCE", 0.01, minimum=0.0)
    MPC_STRETCH_MARGIN = _env_float("MPC_STRETCH_MARGIN", 0.01, minimum=0.0)
    MPC_U_MAX = _env_float("MPC_U_MAX", 0.5, minimum=1e-6)
    MPC_MAX_OUTER = _env_int("MPC_MAX_OUTER", 5, minimum=1)
    MPC_TIME_BUDGET = _env_optional_float("MPC_TIME_BUDGET")

    JACOBIAN_DELTA = _env_float("JACOBIAN_DELTA", 1e-3, minimum=1e-9)
    JACOBIAN_FORGETTING = _env_float("JACOBIAN_FORGETTING", 0.5, minimum=0.0)
    JACOBIAN_REFRESH_STEPS = _env_int("JACOBIAN_REFRESH_STEPS", 10, minimum=1)

    EPISODE_TIME_LIMIT = _env_float("EPISODE_TIME_LIMIT", 180.0, minimum=0.0)
    EPISODE_REPLAN_BUDGET = _env_int("EPISODE_REPLAN_BUDGET", 3, minimum=0)
    EPISODE_SETTLE_STEPS = _env_int("EPISODE_SETTLE_STEPS", 25, minimum=1)

    PERTURB_TWIST_RANGE = _env_range("PERTURB_TWIST_RANGE", (0.8, 1.25))
    PERTURB_DENSITY_RANGE = _env_range("PERTURB_DENSITY_RANGE", (0.8, 1.25))
    PERTURB_BEND_RANGE = _env_range("PERTURB_BEND_RANGE", (0.9, 1.1))

    PSO_PARTICLES = _env_int("PSO_PARTICLES", 24, minimum=1)
    PSO_ITERATIONS = _env_int("PSO_ITERATIONS", 40, minimum=0)
    PSO_INERTIA = _env_float("PSO_INERTIA", 0.72, minimum=0.0)
    PSO_COGNITIVE = _env_float("PSO_COGNITIVE", 1.49, minimum=0.0)
    PSO_SOCIAL = _env_float("PSO_SOCIAL", 1.49, minimum=0.0)


class DevConfig(BaseConfig):
    DEBUG = True
    LOG_LEVEL = os.getenv("LOG_LEVEL", "DEBUG")


class BatchConfig(BaseConfig):
    """Long experiment batches: reproducible files, quieter console."""

    DEBUG = False
    LOG_LEVEL = os.getenv("LOG_LEVEL", "WARNING")
    RECORD_TIMINGS = _env_bool("RECORD_TIMINGS", False)
    # Applies only while RECORD_TIMINGS is on
    PLANNER_SHORTCUT_TIME_BUDGET = _env_optional_float("PLANNER_SHORTCUT_TIME_BUDGET", 2.5)


class TestConfig(BaseConfig):
    __test__ = False

    TESTING = True
    LOG_LEVEL = "WARNING"
    LOG_FILE = None
    RECORD_TIMINGS = False
    SDF_CELL_SIZE = 0.02
    PLANNER_MAX_ITER = 2_000
    PLANNER_SHORTCUT_ATTEMPTS = 20
    PSO_PARTICLES = 8
    PSO_ITERATIONS = 6
    EPISODE_TIME_LIMIT = 60.0
