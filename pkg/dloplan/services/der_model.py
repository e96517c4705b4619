"""Discrete elastic rod model of a deformable linear object held at both ends.

A configuration stores ``m + 2`` vertices ``x_0 .. x_{m+1}``, one material frame
per edge (``m + 1`` frames, columns ``[t, m1, m2]``) and the rest length of every
edge. The first and last edges are virtual: they only carry the grasped end
frames, so ``x_0`` and ``x_{m+1}`` follow from ``x_1``/``M^0`` and ``x_m``/``M^m``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, Mapping, NamedTuple, Optional, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.spatial.transform import Rotation

from dloplan.errors import (
    DegenerateEdgeError,
    DimensionMismatchError,
    InvalidInputError,
    ProjectionFailedError,
    SingularCurvatureError,
)
from dloplan.geometry import (
    axis_angle_matrix,
    rotation_between,
    signed_angle,
    unwrap_near,
    wrap_angle,
)


logger = logging.getLogger(__name__)

MAX_TURNING_ANGLE = np.pi - 0.05
MIN_EDGE_LENGTH = 1e-12
WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class DloParams:
    """Material parameters and discretization of the rod."""

    bend_stiffness: float = 1.0
    twist_stiffness: float = 1.2
    linear_density: float = 2.0
    gravity: float = 9.81
    segment_count: int = 10
    total_length: float = 0.5
    diameter: float = 0.01
    # Per-vertex multipliers on the bending stiffness (length ``segment_count``).
    bend_multipliers: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if not self.bend_stiffness > 0.0:
            raise InvalidInputError("bend_stiffness must be positive")
        if self.twist_stiffness < 0.0 or self.linear_density < 0.0:
            raise InvalidInputError("twist_stiffness and linear_density must be non-negative")
        if not self.total_length > 0.0:
            raise InvalidInputError("total_length must be positive")
        if self.segment_count < 3:
            raise InvalidInputError("segment_count must be at least 3")
        if self.bend_multipliers is not None:
            multipliers = tuple(float(value) for value in self.bend_multipliers)
            if len(multipliers) != self.segment_count:
                raise InvalidInputError("bend_multipliers needs one entry per interior vertex")
            if min(multipliers) <= 0.0:
                raise InvalidInputError("bend_multipliers must be positive")
            object.__setattr__(self, "bend_multipliers", multipliers)

    @property
    def edge_length(self) -> float:
        return self.total_length / (self.segment_count - 1)

    @property
    def vertex_count(self) -> int:
        return self.segment_count + 2

    def bend_weights(self) -> np.ndarray:
        weights = np.full(self.segment_count, self.bend_stiffness)
        if self.bend_multipliers is not None:
            weights = weights * np.asarray(self.bend_multipliers)
        return weights

    def scaled(self, factor: float) -> "DloParams":
        """Scale all three stiffness/density parameters by the same factor."""

        return replace(
            self,
            bend_stiffness=self.bend_stiffness * factor,
            twist_stiffness=self.twist_stiffness * factor,
            linear_density=self.linear_density * factor,
        )

    def as_dict(self) -> dict:
        return {
            "bend_stiffness": self.bend_stiffness,
            "twist_stiffness": self.twist_stiffness,
            "linear_density": self.linear_density,
            "gravity": self.gravity,
            "segment_count": self.segment_count,
            "total_length": self.total_length,
            "diameter": self.diameter,
            "bend_multipliers": list(self.bend_multipliers) if self.bend_multipliers else None,
        }

    @classmethod
    def from_mapping(cls, payload: Mapping[str, Any]) -> "DloParams":
        known = {name: payload[name] for name in cls.__dataclass_fields__ if name in payload}
        if known.get("bend_multipliers") is not None:
            known["bend_multipliers"] = tuple(known["bend_multipliers"])
        return cls(**known)


class EndPoses(NamedTuple):
    """Positions and material frames of the two grasped ends."""

    left_position: np.ndarray
    left_frame: np.ndarray
    right_position: np.ndarray
    right_frame: np.ndarray


class EnergyBreakdown(NamedTuple):
    bend: float
    twist: float
    gravity: float
    total: float


def _frozen(array: Any) -> np.ndarray:
    result = np.array(array, dtype=float)
    result.setflags(write=False)
    return result


@dataclass(frozen=True, eq=False)
class DloConfig:
    """Full rod state. Arrays are copied and made read-only on construction."""

    vertices: np.ndarray
    frames: np.ndarray
    rest_lengths: np.ndarray

    def __post_init__(self) -> None:
        vertices = _frozen(self.vertices)
        frames = _frozen(self.frames)
        rest_lengths = _frozen(self.rest_lengths)
        if vertices.ndim != 2 or vertices.shape[1] != 3 or vertices.shape[0] < 5:
            raise DimensionMismatchError(f"vertices must have shape (m+2, 3), got {vertices.shape}")
        n_edges = vertices.shape[0] - 1
        if frames.shape != (n_edges, 3, 3):
            raise DimensionMismatchError(f"expected {n_edges} frames, got shape {frames.shape}")
        if rest_lengths.shape != (n_edges,):
            raise DimensionMismatchError(f"expected {n_edges} rest lengths, got {rest_lengths.shape}")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "rest_lengths", rest_lengths)

    @property
    def segment_count(self) -> int:
        return self.vertices.shape[0] - 2

    @property
    def feature_points(self) -> np.ndarray:
        return self.vertices[1:-1]

    @property
    def edges(self) -> np.ndarray:
        return np.diff(self.vertices, axis=0)

    @property
    def edge_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.edges, axis=1)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def end_poses(self) -> EndPoses:
        m = self.segment_count
        return EndPoses(
            self.vertices[1].copy(),
            self.frames[0].copy(),
            self.vertices[m].copy(),
            self.frames[-1].copy(),
        )

    def end_separation(self) -> float:
        return float(np.linalg.norm(self.vertices[self.segment_count] - self.vertices[1]))

    def perceptible(self) -> "PerceptibleConfig":
        return PerceptibleConfig(self.feature_points, self.frames[0], self.frames[-1])

    @classmethod
    def from_centerline(
        cls,
        vertices: np.ndarray,
        frame_start: np.ndarray,
        frame_end: np.ndarray,
        rest_lengths: np.ndarray,
        theta_ref: Optional[float] = None,
    ) -> "DloConfig":
        """Build a configuration whose interior frames carry a uniform twist."""

        frames = uniform_twist_frames(np.asarray(vertices, dtype=float), frame_start, frame_end, theta_ref)
        return cls(vertices, frames, rest_lengths)


@dataclass(frozen=True, eq=False)
class PerceptibleConfig:
    """What a perception system reports: the feature points and the two end frames."""

    centerline: np.ndarray
    frame_start: np.ndarray
    frame_end: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "centerline", _frozen(self.centerline))
        object.__setattr__(self, "frame_start", _frozen(self.frame_start))
        object.__setattr__(self, "frame_end", _frozen(self.frame_end))

    def to_config(self, rest_lengths: np.ndarray, theta_ref: Optional[float] = None) -> DloConfig:
        rest_lengths = np.asarray(rest_lengths, dtype=float)
        if rest_lengths.shape[0] != self.centerline.shape[0] + 1:
            raise DimensionMismatchError("rest lengths do not match the centerline")
        vertices = np.empty((self.centerline.shape[0] + 2, 3))
        vertices[1:-1] = self.centerline
        vertices[0] = self.centerline[0] - rest_lengths[0] * self.frame_start[:, 0]
        vertices[-1] = self.centerline[-1] + rest_lengths[-1] * self.frame_end[:, 0]
        return DloConfig.from_centerline(vertices, self.frame_start, self.frame_end, rest_lengths, theta_ref)


@dataclass(frozen=True)
class ProjectionSettings:
    """Tolerances and budgets of the stable-configuration projection."""

    penalty_scale: float = 1e4
    stationarity_scale: float = 1e-8
    length_tolerance_scale: float = 1e-4
    max_iterations: int = 500
    max_doublings: int = 6
    newton_steps: int = 4
    accept_unconverged: bool = False

    def loosened(self, factor: float = 100.0) -> "ProjectionSettings":
        return replace(
            self,
            stationarity_scale=self.stationarity_scale * factor,
            accept_unconverged=True,
        )

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "ProjectionSettings":
        return cls(
            penalty_scale=float(config.get("PROJECTION_PENALTY_SCALE", cls.penalty_scale)),
            stationarity_scale=float(config.get("PROJECTION_STATIONARITY_SCALE", cls.stationarity_scale)),
            length_tolerance_scale=float(
                config.get("PROJECTION_LENGTH_TOLERANCE_SCALE", cls.length_tolerance_scale)
            ),
            max_iterations=int(config.get("PROJECTION_MAX_ITER", cls.max_iterations)),
            max_doublings=int(config.get("PROJECTION_MAX_DOUBLINGS", cls.max_doublings)),
            newton_steps=int(config.get("PROJECTION_NEWTON_STEPS", cls.newton_steps)),
        )


# ---------------------------------------------------------------------------
# Geometry of the centerline
# ---------------------------------------------------------------------------


def _edge_data(vertices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.diff(vertices, axis=0)
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths < MIN_EDGE_LENGTH):
        raise DegenerateEdgeError("consecutive vertices coincide")
    return edges, lengths


def turning_angles(vertices: np.ndarray) -> np.ndarray:
    """Angle between consecutive edges at each vertex ``x_1 .. x_m``."""

    edges, lengths = _edge_data(np.asarray(vertices, dtype=float))
    cosines = np.einsum("ij,ij->i", edges[:-1], edges[1:]) / (lengths[:-1] * lengths[1:])
    return np.arccos(np.clip(cosines, -1.0, 1.0))


def curvature_binormals(vertices: np.ndarray) -> np.ndarray:
    """Curvature binormal at each vertex ``x_1 .. x_m``; magnitude ``2 tan(phi / 2)``."""

    vertices = np.asarray(vertices, dtype=float)
    edges, lengths = _edge_data(vertices)
    if np.any(turning_angles(vertices) > MAX_TURNING_ANGLE):
        raise SingularCurvatureError("consecutive edges are nearly antiparallel")
    a, b = edges[:-1], edges[1:]
    denominator = lengths[:-1] * lengths[1:] + np.einsum("ij,ij->i", a, b)
    return 2.0 * np.cross(a, b) / denominator[:, None]


def _transport_b1(tangents: np.ndarray, b1: np.ndarray) -> np.ndarray:
    """Parallel transport the first Bishop axis along the unit tangents."""

    out = np.empty_like(tangents)
    current = b1 - np.dot(b1, tangents[0]) * tangents[0]
    current = current / np.linalg.norm(current)
    out[0] = current
    for k in range(1, tangents.shape[0]):
        current = rotation_between(tangents[k - 1], tangents[k]) @ current
        # Renormalize against the new tangent so long chains do not drift.
        current = current - np.dot(current, tangents[k]) * tangents[k]
        current = current / np.linalg.norm(current)
        out[k] = current
    return out


def parallel_transport(vertices: np.ndarray, seed_frame: np.ndarray) -> np.ndarray:
    """Twist-free (Bishop) frames along the centerline, seeded at edge 0.

    Returns an ``(m+1, 3, 3)`` array whose columns are ``[t, b1, b2]``.
    """

    edges, lengths = _edge_data(np.asarray(vertices, dtype=float))
    tangents = edges / lengths[:, None]
    b1 = _transport_b1(tangents, np.asarray(seed_frame, dtype=float)[:, 1])
    b2 = np.cross(tangents, b1)
    return np.stack([tangents, b1, b2], axis=-1)


def material_twist_angles(cfg: DloConfig) -> np.ndarray:
    """Twist angles ``theta^0 .. theta^m`` of the material frames, ``theta^0 = 0``.

    The Bishop frame is seeded with ``b1^0 = m1^0``. Per-edge increments are
    wrapped to ``(-pi, pi]`` and accumulated, so the total twist is recovered
    without a branch ambiguity as long as neighbouring frames differ by less
    than half a turn.
    """

    edges, lengths = _edge_data(cfg.vertices)
    tangents = edges / lengths[:, None]
    b1 = _transport_b1(tangents, cfg.frames[0][:, 1])
    m1 = cfg.frames[:, :, 1]
    raw = np.arctan2(
        np.einsum("ij,ij->i", tangents, np.cross(b1, m1)),
        np.einsum("ij,ij->i", b1, m1),
    )
    increments = wrap_angle(np.diff(raw))
    return np.concatenate([[0.0], np.cumsum(increments)])


def uniform_twist_frames(
    vertices: np.ndarray,
    frame_start: np.ndarray,
    frame_end: np.ndarray,
    theta_ref: Optional[float] = None,
) -> np.ndarray:
    """Material frames with the end frames fixed and the twist spread uniformly."""

    edges, lengths = _edge_data(vertices)
    tangents = edges / lengths[:, None]
    b1 = _transport_b1(tangents, np.asarray(frame_start)[:, 1])
    theta_end = signed_angle(b1[-1], np.asarray(frame_end)[:, 1], tangents[-1])
    if theta_ref is not None:
        theta_end = unwrap_near(theta_end, theta_ref)
    voronoi = lengths[:-1] + lengths[1:]
    theta = theta_end * np.concatenate([[0.0], np.cumsum(voronoi)]) / voronoi.sum()
    b2 = np.cross(tangents, b1)
    m1 = np.cos(theta)[:, None] * b1 + np.sin(theta)[:, None] * b2
    m2 = np.cross(tangents, m1)
    frames = np.stack([tangents, m1, m2], axis=-1)
    frames[0] = frame_start
    frames[-1] = frame_end
    return frames


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------


def potential_energy(cfg: DloConfig, params: DloParams) -> EnergyBreakdown:
    """Bending, twisting and gravitational energy of a configuration."""

    _check_discretization(cfg, params)
    vertices = cfg.vertices
    _, lengths = _edge_data(vertices)
    kb = curvature_binormals(vertices)
    voronoi = lengths[:-1] + lengths[1:]
    bend = float(np.sum(params.bend_weights() * np.einsum("ij,ij->i", kb, kb) / voronoi))
    theta = material_twist_angles(cfg)
    twist = float(params.twist_stiffness * np.sum(np.diff(theta) ** 2 / voronoi))
    gravity = float(
        params.linear_density * params.gravity * np.sum(vertices[1:-1, 2] * voronoi / 2.0)
    )
    return EnergyBreakdown(bend, twist, gravity, bend + twist + gravity)


def _reduced_energy(
    vertices: np.ndarray,
    m1_start: np.ndarray,
    m1_end: np.ndarray,
    theta_ref: float,
    params: DloParams,
) -> Tuple[float, np.ndarray, float]:
    """Energy of the centerline with uniform twist, its vertex gradient and ``theta^m``.

    With the end frames held fixed the interior twist relaxes to a uniform
    rate, which leaves the energy a function of the vertices alone.
    """

    edges = np.diff(vertices, axis=0)
    lengths = np.linalg.norm(edges, axis=1)
    tangents = edges / lengths[:, None]
    a, b = edges[:-1], edges[1:]
    la, lb = lengths[:-1], lengths[1:]
    denominator = np.maximum(la * lb + np.einsum("ij,ij->i", a, b), 1e-12 * la * lb)
    kb = 2.0 * np.cross(a, b) / denominator[:, None]
    k2 = np.einsum("ij,ij->i", kb, kb)
    voronoi = la + lb
    weights = params.bend_weights()

    bend = float(np.sum(weights * k2 / voronoi))
    a_hat = a / la[:, None]
    b_hat = b / lb[:, None]
    dk2_da = 2.0 * (2.0 * np.cross(b, kb) - k2[:, None] * (lb[:, None] * a_hat + b)) / denominator[:, None]
    dk2_db = 2.0 * (-2.0 * np.cross(a, kb) - k2[:, None] * (la[:, None] * b_hat + a)) / denominator[:, None]
    scale = (weights / voronoi)[:, None]
    shrink = (weights * k2 / voronoi**2)[:, None]
    grad_edges = np.zeros_like(edges)
    grad_edges[:-1] += scale * dk2_da - shrink * a_hat
    grad_edges[1:] += scale * dk2_db - shrink * b_hat

    b1 = _transport_b1(tangents, m1_start)
    theta = unwrap_near(signed_angle(b1[-1], m1_end, tangents[-1]), theta_ref)
    total_voronoi = float(voronoi.sum())
    twist = params.twist_stiffness * theta**2 / total_voronoi
    dtheta = np.zeros_like(edges)
    dtheta[:-1] += 0.5 * kb / la[:, None]
    dtheta[1:] += 0.5 * kb / lb[:, None]
    counts = np.zeros(edges.shape[0])
    counts[:-1] += 1.0
    counts[1:] += 1.0
    grad_edges += params.twist_stiffness * (
        (2.0 * theta / total_voronoi) * dtheta
        - (theta**2 / total_voronoi**2) * counts[:, None] * tangents
    )

    weight = params.linear_density * params.gravity
    heights = vertices[1:-1, 2]
    gravity = float(weight * np.sum(heights * voronoi / 2.0))
    coefficients = np.zeros(edges.shape[0])
    coefficients[:-1] += heights
    coefficients[1:] += heights
    grad_edges += 0.5 * weight * coefficients[:, None] * tangents

    grad = np.zeros_like(vertices)
    grad[1:] += grad_edges
    grad[:-1] -= grad_edges
    grad[1:-1, 2] += 0.5 * weight * voronoi
    return bend + twist + gravity, grad, theta


def energy_gradient(cfg: DloConfig, params: DloParams) -> np.ndarray:
    """Gradient of the total energy with respect to the free vertices ``x_2 .. x_{m-1}``.

    Returned flattened, length ``3 (m - 2)``.
    """

    _check_discretization(cfg, params)
    curvature_binormals(cfg.vertices)
    theta_ref = float(material_twist_angles(cfg)[-1])
    _, grad, _ = _reduced_energy(
        np.asarray(cfg.vertices), cfg.frames[0][:, 1], cfg.frames[-1][:, 1], theta_ref, params
    )
    m = cfg.segment_count
    return grad[2:m].ravel()


def _constraint_jacobian(vertices: np.ndarray) -> np.ndarray:
    """Jacobian of the interior edge lengths with respect to the free vertices."""

    m = vertices.shape[0] - 2
    edges = np.diff(vertices, axis=0)
    tangents = edges / np.linalg.norm(edges, axis=1)[:, None]
    jacobian = np.zeros((m - 1, m - 2, 3))
    for k in range(1, m):
        if k + 1 <= m - 1:
            jacobian[k - 1, k - 1] = tangents[k]
        if k >= 2:
            jacobian[k - 1, k - 2] = -tangents[k]
    return jacobian.reshape(m - 1, -1)


def _projected_norm(gradient: np.ndarray, vertices: np.ndarray) -> float:
    jacobian = _constraint_jacobian(vertices)
    multipliers, *_ = np.linalg.lstsq(jacobian.T, gradient, rcond=None)
    return float(np.linalg.norm(gradient - jacobian.T @ multipliers))


def length_violation(cfg: DloConfig) -> float:
    """Largest deviation of an interior edge from its rest length."""

    return float(np.max(np.abs(cfg.edge_lengths[1:-1] - cfg.rest_lengths[1:-1])))


def stationarity_residual(cfg: DloConfig, params: DloParams) -> float:
    """Norm of the energy gradient projected onto the inextensible directions."""

    return _projected_norm(energy_gradient(cfg, params), np.asarray(cfg.vertices))


# ---------------------------------------------------------------------------
# Stable projection
# ---------------------------------------------------------------------------


def _check_discretization(cfg: DloConfig, params: DloParams) -> None:
    if cfg.segment_count != params.segment_count:
        raise DimensionMismatchError(
            f"configuration has {cfg.segment_count} segments, parameters expect {params.segment_count}"
        )


def _with_virtual_vertices(vertices: np.ndarray, frames: np.ndarray, rest_lengths: np.ndarray) -> np.ndarray:
    vertices = np.array(vertices, dtype=float)
    vertices[0] = vertices[1] - rest_lengths[0] * frames[0][:, 0]
    vertices[-1] = vertices[-2] + rest_lengths[-1] * frames[-1][:, 0]
    return vertices


def _fd_hessian(fun, z: np.ndarray, step: float) -> np.ndarray:
    n = z.shape[0]
    hessian = np.empty((n, n))
    for i in range(n):
        shifted = z.copy()
        shifted[i] += step
        _, g_plus = fun(shifted)
        shifted[i] -= 2.0 * step
        _, g_minus = fun(shifted)
        hessian[:, i] = (g_plus - g_minus) / (2.0 * step)
    return 0.5 * (hessian + hessian.T)


def _newton_polish(fun, z: np.ndarray, steps: int, target: float, fd_step: float) -> np.ndarray:
    for _ in range(steps):
        _, gradient = fun(z)
        gradient_norm = np.linalg.norm(gradient)
        if gradient_norm <= target:
            break
        hessian = _fd_hessian(fun, z, fd_step)
        try:
            direction = -np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(direction)) or gradient @ direction >= 0.0:
            break
        _, trial_gradient = fun(z + direction)
        if np.linalg.norm(trial_gradient) >= gradient_norm:
            break
        z = z + direction
    return z


def project_stable(
    init: DloConfig,
    params: DloParams,
    settings: Optional[ProjectionSettings] = None,
    theta_ref: Optional[float] = None,
) -> DloConfig:
    """Project ``init`` onto a neighbouring stable configuration.

    ``x_1``, ``x_m``, both end frames and the virtual vertices stay fixed; the
    interior vertices minimize the potential energy under an inextensibility
    penalty. Interior frames are rebuilt with uniform twist.

    Raises ``ProjectionFailedError`` when the minimizer does not reach the
    stationarity and edge-length tolerances within its budget.
    """

    settings = settings or ProjectionSettings()
    _check_discretization(init, params)
    m = init.segment_count
    length = params.total_length
    rest = np.asarray(init.rest_lengths)
    frame_start, frame_end = init.frames[0], init.frames[-1]
    m1_start, m1_end = frame_start[:, 1], frame_end[:, 1]
    base = _with_virtual_vertices(init.vertices, init.frames, rest)
    if theta_ref is None:
        theta_ref = float(material_twist_angles(init)[-1])

    grad_tolerance = settings.stationarity_scale * params.bend_stiffness / length
    length_tolerance = settings.length_tolerance_scale * length
    interior_rest = rest[1:-1]

    def assemble(z: np.ndarray) -> np.ndarray:
        full = base.copy()
        full[2:m] = z.reshape(-1, 3)
        return full

    def penalised(z: np.ndarray, weight: float) -> Tuple[float, np.ndarray]:
        full = assemble(z)
        energy, grad, _ = _reduced_energy(full, m1_start, m1_end, theta_ref, params)
        edges = full[2 : m + 1] - full[1:m]
        lengths = np.linalg.norm(edges, axis=1)
        violation = lengths - interior_rest
        energy += weight * float(np.sum(violation**2))
        grad_edges = (2.0 * weight * violation / lengths)[:, None] * edges
        grad[2 : m + 1] += grad_edges
        grad[1:m] -= grad_edges
        return energy, grad[2:m].ravel()

    def assess(z: np.ndarray) -> Tuple[float, float]:
        full = assemble(z)
        _, grad, _ = _reduced_energy(full, m1_start, m1_end, theta_ref, params)
        residual = _projected_norm(grad[2:m].ravel(), full)
        lengths = np.linalg.norm(full[2 : m + 1] - full[1:m], axis=1)
        return residual, float(np.max(np.abs(lengths - interior_rest)))

    def finish(z: np.ndarray) -> DloConfig:
        full = assemble(z)
        if np.any(turning_angles(full) > MAX_TURNING_ANGLE):
            raise ProjectionFailedError("projection ended at a near-singular bend")
        frames = uniform_twist_frames(full, frame_start, frame_end, theta_ref)
        return DloConfig(full, frames, rest)

    try:
        z = base[2:m].ravel().copy()
        residual, violation = assess(z)
        if residual <= grad_tolerance and violation <= length_tolerance:
            return finish(z)

        weight = settings.penalty_scale * params.bend_stiffness / length**2
        budget = settings.max_iterations
        for doubling in range(settings.max_doublings + 1):
            if budget <= 0:
                break
            result = minimize(
                penalised,
                z,
                args=(weight,),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": budget, "gtol": grad_tolerance, "ftol": 1e-15, "maxcor": 20},
            )
            budget -= max(int(result.nit), 1)
            z = _newton_polish(
                lambda trial, w=weight: penalised(trial, w),
                result.x,
                settings.newton_steps,
                0.1 * grad_tolerance,
                1e-6 * length,
            )
            residual, violation = assess(z)
            if violation <= length_tolerance:
                break
            weight *= 2.0
            logger.debug("Edge violation %.3g after pass %d, doubling penalty", violation, doubling)
    except (DegenerateEdgeError, SingularCurvatureError, FloatingPointError) as exc:
        raise ProjectionFailedError(f"projection hit a degenerate configuration: {exc}") from exc

    if not np.isfinite(residual) or residual > grad_tolerance or violation > length_tolerance:
        if not settings.accept_unconverged or not np.isfinite(residual):
            raise ProjectionFailedError(
                f"projection did not converge (residual {residual:.3g}, edge violation {violation:.3g})"
            )
        logger.debug("Accepting unconverged projection (residual %.3g)", residual)
    return finish(z)


def forward_pred(
    start: DloConfig,
    end_poses: EndPoses,
    params: DloParams,
    settings: Optional[ProjectionSettings] = None,
) -> DloConfig:
    """Predict the stable shape after moving the grasped ends to ``end_poses``."""

    current = start.end_poses()
    if all(np.allclose(a, b, rtol=0.0, atol=1e-12) for a, b in zip(current, end_poses)):
        return start
    left_position, left_frame, right_position, right_frame = (np.asarray(value, dtype=float) for value in end_poses)
    if np.linalg.norm(right_position - left_position) >= params.total_length:
        raise ProjectionFailedError("end separation reaches the rod length")
    m = start.segment_count
    vertices = np.array(start.vertices)
    vertices[1] = left_position
    vertices[m] = right_position
    frames = np.array(start.frames)
    frames[0] = left_frame
    frames[-1] = right_frame
    vertices = _with_virtual_vertices(vertices, frames, start.rest_lengths)
    theta_ref = float(material_twist_angles(start)[-1])
    seed = DloConfig(vertices, frames, start.rest_lengths)
    return project_stable(seed, params, settings, theta_ref=theta_ref)


def dlo_erp(start: DloConfig, goal: DloConfig, eta: float) -> DloConfig:
    """Interpolate centroid linearly and frames spherically, keeping edge lengths exact."""

    if start.vertices.shape != goal.vertices.shape or not np.allclose(
        start.rest_lengths, goal.rest_lengths, rtol=1e-12, atol=0.0
    ):
        raise DimensionMismatchError("configurations do not share a discretization")
    if eta <= 0.0:
        return start
    if eta >= 1.0:
        return goal
    centroid = (1.0 - eta) * start.centroid + eta * goal.centroid
    rot_start = Rotation.from_matrix(start.frames)
    rot_goal = Rotation.from_matrix(goal.frames)
    relative = (rot_start.inv() * rot_goal).as_rotvec()
    frames = (rot_start * Rotation.from_rotvec(eta * relative)).as_matrix()
    tangents = frames[:, :, 0]
    vertices = np.zeros_like(start.vertices)
    vertices[1:] = np.cumsum(start.rest_lengths[:, None] * tangents, axis=0)
    vertices += centroid - vertices.mean(axis=0)
    return DloConfig(vertices, frames, start.rest_lengths)


# ---------------------------------------------------------------------------
# Shape constructors
# ---------------------------------------------------------------------------


def vertical_end_frames(heading_left: np.ndarray, heading_right: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """End frames for a rod held with both grippers pointing up.

    The rod leaves the left gripper upwards (``t^0 = +z``) and enters the right
    gripper downwards (``t^m = -z``); ``m1`` is the given horizontal heading.
    """

    frames = []
    for tangent, heading in ((WORLD_UP, heading_left), (-WORLD_UP, heading_right)):
        heading = np.asarray(heading, dtype=float)
        heading = heading - np.dot(heading, tangent) * tangent
        heading = heading / np.linalg.norm(heading)
        frames.append(np.column_stack([tangent, heading, np.cross(tangent, heading)]))
    return frames[0], frames[1]


def arch_config(
    left_position: np.ndarray,
    heading: np.ndarray,
    separation: float,
    params: DloParams,
    roll_left: float = 0.0,
    roll_right: float = 0.0,
) -> DloConfig:
    """Unprojected arch: vertical legs joined by a half circle of diameter ``separation``.

    The right end lands close to ``left_position + separation * heading``; the
    edge lengths are exact. Project the result before treating it as stable.
    """

    heading = np.asarray(heading, dtype=float)
    heading = heading - np.dot(heading, WORLD_UP) * WORLD_UP
    heading = heading / np.linalg.norm(heading)
    length = params.total_length
    radius = separation / 2.0
    leg = (length - np.pi * radius) / 2.0
    if radius <= 0.0 or leg < 0.0:
        raise InvalidInputError("arch separation must lie in (0, 2 L / pi]")
    m = params.segment_count
    spacing = params.edge_length

    def tangent_at(s: float) -> np.ndarray:
        if s < leg:
            return WORLD_UP
        if s < leg + np.pi * radius:
            angle = (s - leg) / radius
            return np.cos(angle) * WORLD_UP + np.sin(angle) * heading
        return -WORLD_UP

    vertices = np.empty((m + 2, 3))
    vertices[1] = left_position
    for k in range(1, m):
        direction = tangent_at((k - 0.5) * spacing)
        vertices[k + 1] = vertices[k] + spacing * direction / np.linalg.norm(direction)
    frame_start, frame_end = vertical_end_frames(
        axis_angle_matrix(WORLD_UP, roll_left) @ heading,
        axis_angle_matrix(WORLD_UP, roll_right) @ heading,
    )
    rest = np.full(m + 1, spacing)
    vertices = _with_virtual_vertices(vertices, np.stack([frame_start, frame_end]), rest)
    return DloConfig.from_centerline(vertices, frame_start, frame_end, rest)


def straight_config(start: np.ndarray, direction: np.ndarray, params: DloParams, roll: float = 0.0) -> DloConfig:
    """Straight rod from ``start`` along ``direction`` with the given total twist."""

    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    m = params.segment_count
    spacing = params.edge_length
    steps = np.arange(-1, m + 1, dtype=float)
    vertices = np.asarray(start, dtype=float) + steps[:, None] * spacing * direction
    helper = WORLD_UP if abs(direction[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    m1 = np.cross(helper, direction)
    m1 /= np.linalg.norm(m1)
    frame_start = np.column_stack([direction, m1, np.cross(direction, m1)])
    frame_end = frame_start @ axis_angle_matrix(np.array([1.0, 0.0, 0.0]), roll)
    rest = np.full(m + 1, spacing)
    return DloConfig.from_centerline(vertices, frame_start, frame_end, rest, theta_ref=roll)


__all__ = [
    "DloConfig",
    "DloParams",
    "EndPoses",
    "EnergyBreakdown",
    "PerceptibleConfig",
    "ProjectionSettings",
    "arch_config",
    "curvature_binormals",
    "dlo_erp",
    "energy_gradient",
    "forward_pred",
    "length_violation",
    "material_twist_angles",
    "parallel_transport",
    "potential_energy",
    "project_stable",
    "stationarity_residual",
    "straight_config",
    "turning_angles",
    "uniform_twist_frames",
    "vertical_end_frames",
]
