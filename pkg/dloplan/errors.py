"""Exception hierarchy shared by the toolkit services and the CLI."""

from __future__ import annotations


class DloplanError(Exception):
    """Base class for every error raised by the toolkit."""


class DegenerateEdgeError(DloplanError):
    """Two consecutive centerline vertices coincide."""


class SingularCurvatureError(DloplanError):
    """Consecutive edges are (nearly) antiparallel; the curvature binormal blows up."""


class ProjectionFailedError(DloplanError):
    """The stable-configuration minimizer did not reach its tolerance."""


class DimensionMismatchError(DloplanError):
    """Two configurations or arrays do not share the same discretization."""


class ConfigurationError(DloplanError):
    """A setting is invalid or a resource cap would be exceeded."""


class SamplingStarvedError(DloplanError):
    """Random sampling could not produce a usable sample within its retries."""


class InvalidInputError(DloplanError):
    """An input violates the preconditions of an operation."""


class PlanningFailedError(DloplanError):
    """The planner exhausted its iteration budget without connecting the trees."""

    def __init__(self, message: str, stats=None) -> None:
        super().__init__(message)
        self.stats = stats


class JacobianEstimationError(DloplanError):
    """A perturbed projection failed while estimating the DLO Jacobian."""


class SimulationFaultError(DloplanError):
    """The quasi-static simulator could not compute the next DLO state."""


class TrajectoryError(DloplanError):
    """A scripted trajectory pose could not be reached by the robot."""


class FormatError(DloplanError):
    """A file could not be parsed or has an unsupported format/version."""


class AggregationError(DloplanError):
    """Episode logs cannot be aggregated together."""


class EpisodeFailedError(DloplanError):
    """An executed episode did not reach the goal."""

    def __init__(self, message: str, cause: str = "unknown") -> None:
        super().__init__(message)
        self.cause = cause


__all__ = [
    "AggregationError",
    "ConfigurationError",
    "DegenerateEdgeError",
    "DimensionMismatchError",
    "DloplanError",
    "EpisodeFailedError",
    "FormatError",
    "InvalidInputError",
    "JacobianEstimationError",
    "PlanningFailedError",
    "ProjectionFailedError",
    "SamplingStarvedError",
    "SimulationFaultError",
    "SingularCurvatureError",
    "TrajectoryError",
]
