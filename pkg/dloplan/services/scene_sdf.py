"""Obstacle scenes, voxel signed-distance fields and whole-body collision checks."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from dloplan.errors import ConfigurationError, FormatError, InvalidInputError
from dloplan.geometry import transform_from_xyz_rpy


logger = logging.getLogger(__name__)

SCENE_FORMAT = "dloplan.scene"
SCENE_FORMAT_VERSION = 1
GRID_FORMAT_VERSION = 1
# Distance reported everywhere when the scene holds no obstacle.
EXTERIOR_SENTINEL = 1.0e3
# Round-off allowance on clearance comparisons.
CLEARANCE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def distance(self, points: np.ndarray) -> np.ndarray:
        local = (points - self.center) @ self.rotation
        q = np.abs(local) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def as_dict(self) -> dict:
        return {
            "type": "box",
            "center": self.center.tolist(),
            "half_extents": self.half_extents.tolist(),
            "rotation": self.rotation.tolist(),
        }


@dataclass(frozen=True, eq=False)
class Sphere:
    center: np.ndarray
    radius: float

    def distance(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points - self.center, axis=1) - self.radius

    def as_dict(self) -> dict:
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Capsule:
    start: np.ndarray
    end: np.ndarray
    radius: float

    def distance(self, points: np.ndarray) -> np.ndarray:
        axis = self.end - self.start
        denominator = float(axis @ axis)
        if denominator == 0.0:
            return np.linalg.norm(points - self.start, axis=1) - self.radius
        s = np.clip((points - self.start) @ axis / denominator, 0.0, 1.0)
        closest = self.start + s[:, None] * axis
        return np.linalg.norm(points - closest, axis=1) - self.radius

    def as_dict(self) -> dict:
        return {"type": "capsule", "start": self.start.tolist(), "end": self.end.tolist(), "radius": self.radius}


Primitive = Union[Box, Sphere, Capsule]


def _vector(value: Any, name: str) -> np.ndarray:
    array = np.asarray(value, dtype=float)
    if array.shape != (3,) or not np.all(np.isfinite(array)):
        raise FormatError(f"{name} must be three finite numbers")
    return array


def _parse_primitive(entry: Mapping[str, Any]) -> Primitive:
    kind = entry.get("type")
    if kind == "box":
        rotation = np.eye(3)
        if "rotation" in entry:
            rotation = np.asarray(entry["rotation"], dtype=float)
        elif "rpy" in entry:
            rotation = transform_from_xyz_rpy((0.0, 0.0, 0.0), entry["rpy"])[:3, :3]
        half_extents = _vector(entry["half_extents"], "half_extents")
        if np.any(half_extents <= 0.0):
            raise FormatError("box half extents must be positive")
        return Box(_vector(entry["center"], "center"), half_extents, rotation)
    if kind == "sphere":
        return Sphere(_vector(entry["center"], "center"), float(entry["radius"]))
    if kind == "capsule":
        return Capsule(_vector(entry["start"], "start"), _vector(entry["end"], "end"), float(entry["radius"]))
    raise FormatError(f"unknown primitive type {kind!r}")


@dataclass(frozen=True, eq=False)
class Scene:
    name: str
    primitives: Tuple[Primitive, ...]
    bounds_min: np.ndarray
    bounds_max: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.bounds_max <= self.bounds_min):
            raise InvalidInputError("scene bounds are empty")

    def distance(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.primitives:
            return np.full(points.shape[0], EXTERIOR_SENTINEL)
        return np.min([primitive.distance(points) for primitive in self.primitives], axis=0)

    def contains(self, points: np.ndarray) -> bool:
        points = np.atleast_2d(points)
        return bool(np.all(points >= self.bounds_min) and np.all(points <= self.bounds_max))

    def as_dict(self) -> dict:
        return {
            "format": SCENE_FORMAT,
            "version": SCENE_FORMAT_VERSION,
            "name": self.name,
            "bounds": {"min": self.bounds_min.tolist(), "max": self.bounds_max.tolist()},
            "primitives": [primitive.as_dict() for primitive in self.primitives],
        }

    def digest(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    @classmethod
    def from_mapping(cls, payload: Mapping[str, Any]) -> "Scene":
        if payload.get("format") != SCENE_FORMAT or int(payload.get("version", 0)) != SCENE_FORMAT_VERSION:
            raise FormatError(f"unsupported scene document (format {payload.get('format')!r})")
        try:
            bounds = payload["bounds"]
            primitives = tuple(_parse_primitive(entry) for entry in payload.get("primitives", ()))
            return cls(
                str(payload.get("name", "scene")),
                primitives,
                _vector(bounds["min"], "bounds.min"),
                _vector(bounds["max"], "bounds.max"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed scene document: {exc}") from exc


@dataclass(frozen=True, eq=False)
class SdfGrid:
    """Signed distances sampled at ``origin + index * cell_size``."""

    origin: np.ndarray
    cell_size: float
    values: np.ndarray
    scene_digest: str = ""

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ConfigurationError("an SDF grid needs at least two samples per axis")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.values.shape)

    @property
    def upper_corner(self) -> np.ndarray:
        return self.origin + (np.array(self.dims) - 1) * self.cell_size

    def voxel_center(self, index: Sequence[int]) -> np.ndarray:
        return self.origin + np.asarray(index, dtype=float) * self.cell_size

    def out_of_bounds(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.any((points < self.origin) | (points > self.upper_corner), axis=1)

    def query(self, points: np.ndarray, with_gradient: bool = False):
        """Trilinear interpolation; points outside the grid are clamped to its faces."""

        points = np.atleast_2d(np.asarray(points, dtype=float))
        dims = np.array(self.dims)
        scaled = (points - self.origin) / self.cell_size
        inside_axis = (scaled >= 0.0) & (scaled <= dims - 1)
        scaled = np.clip(scaled, 0.0, dims - 1)
        index = np.minimum(np.floor(scaled).astype(int), dims - 2)
        frac = scaled - index
        ix, iy, iz = index.T
        tx, ty, tz = frac.T
        v = self.values
        c000, c100 = v[ix, iy, iz], v[ix + 1, iy, iz]
        c010, c110 = v[ix, iy + 1, iz], v[ix + 1, iy + 1, iz]
        c001, c101 = v[ix, iy, iz + 1], v[ix + 1, iy, iz + 1]
        c011, c111 = v[ix, iy + 1, iz + 1], v[ix + 1, iy + 1, iz + 1]
        c00 = c000 * (1 - tx) + c100 * tx
        c10 = c010 * (1 - tx) + c110 * tx
        c01 = c001 * (1 - tx) + c101 * tx
        c11 = c011 * (1 - tx) + c111 * tx
        c0 = c00 * (1 - ty) + c10 * ty
        c1 = c01 * (1 - ty) + c11 * ty
        distance = c0 * (1 - tz) + c1 * tz
        if not with_gradient:
            return distance
        gx = ((c100 - c000) * (1 - ty) + (c110 - c010) * ty) * (1 - tz) + (
            (c101 - c001) * (1 - ty) + (c111 - c011) * ty
        ) * tz
        gy = (c10 - c00) * (1 - tz) + (c11 - c01) * tz
        gz = c1 - c0
        gradient = np.stack([gx, gy, gz], axis=1) / self.cell_size
        return distance, gradient * inside_axis


def build_sdf(scene: Scene, cell_size: float, max_voxels: int = 50_000_000) -> SdfGrid:
    """Sample the exact union distance of ``scene`` on a regular lattice over its bounds."""

    if not cell_size > 0.0:
        raise ConfigurationError("SDF cell size must be positive")
    extent = scene.bounds_max - scene.bounds_min
    dims = np.maximum(np.ceil(extent / cell_size).astype(int) + 1, 2)
    total = int(np.prod(dims))
    if total > max_voxels:
        raise ConfigurationError(f"SDF grid of {total} voxels exceeds the cap of {max_voxels}")
    axes = [scene.bounds_min[i] + np.arange(dims[i]) * cell_size for i in range(3)]
    values = np.empty(tuple(dims))
    yy, zz = np.meshgrid(axes[1], axes[2], indexing="ij")
    plane = np.column_stack([np.zeros(yy.size), yy.ravel(), zz.ravel()])
    for i, x in enumerate(axes[0]):
        plane[:, 0] = x
        values[i] = scene.distance(plane).reshape(dims[1], dims[2])
    logger.debug("Built SDF grid %s for scene %s", tuple(dims), scene.name)
    return SdfGrid(scene.bounds_min.copy(), float(cell_size), values, scene.digest())


class SdfSample(NamedTuple):
    distance: np.ndarray
    clamped: np.ndarray


def sdf_query(grid: SdfGrid, points: np.ndarray) -> SdfSample:
    """Distances at ``points``; ``clamped`` marks points moved onto the grid faces first."""

    points = np.atleast_2d(np.asarray(points, dtype=float))
    return SdfSample(grid.query(points), grid.out_of_bounds(points))


def save_grid(grid: SdfGrid, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        path,
        format_version=np.array(GRID_FORMAT_VERSION),
        origin=grid.origin,
        cell_size=np.array(grid.cell_size),
        values=grid.values,
        scene_digest=np.array(grid.scene_digest),
    )


def load_grid(path: Path) -> SdfGrid:
    try:
        with np.load(Path(path), allow_pickle=False) as payload:
            if int(payload["format_version"]) != GRID_FORMAT_VERSION:
                raise FormatError(f"unsupported SDF cache version in {path}")
            return SdfGrid(
                payload["origin"],
                float(payload["cell_size"]),
                payload["values"],
                str(payload["scene_digest"]),
            )
    except (OSError, KeyError, ValueError) as exc:
        raise FormatError(f"cannot read SDF cache {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Collision checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollisionMargins:
    clearance: float = 0.01
    dlo_radius: float = 0.007
    check_self: bool = True
    check_robot_dlo: bool = True

    @classmethod
    def for_rod(cls, diameter: float, clearance: float = 0.01, **kwargs: Any) -> "CollisionMargins":
        return cls(clearance=clearance, dlo_radius=diameter / 2.0 + 0.002, **kwargs)


def dlo_sphere_centers(feature_points: np.ndarray) -> np.ndarray:
    """``3 (m - 1) + 1`` points linearly interpolated between the feature points."""

    starts = feature_points[:-1]
    steps = np.diff(feature_points, axis=0)
    fractions = np.array([0.0, 1.0 / 3.0, 2.0 / 3.0])
    inner = starts[:, None, :] + fractions[None, :, None] * steps[:, None, :]
    return np.vstack([inner.reshape(-1, 3), feature_points[-1:]])


def sphere_margins(grid: SdfGrid, centers: np.ndarray, radii: Union[float, np.ndarray], clearance: float) -> np.ndarray:
    """Clearance surplus ``d_o(c) - r - eps_d`` of each sphere."""

    sample = sdf_query(grid, centers)
    if np.any(sample.clamped):
        logger.debug("%d sphere(s) outside the SDF grid; distances taken at its faces", int(np.count_nonzero(sample.clamped)))
    return sample.distance - radii - clearance


def self_collision_free(robot, centers: np.ndarray) -> bool:
    first, second = robot.self_pairs
    gaps = np.linalg.norm(centers[first] - centers[second], axis=1)
    return bool(np.all(gaps >= robot.sphere_radii[first] + robot.sphere_radii[second]))


def robot_dlo_free(robot, centers: np.ndarray, dlo_centers: np.ndarray, dlo_radius: float) -> bool:
    mask = robot.dlo_check_mask
    arm_centers = centers[mask]
    gaps = np.linalg.norm(arm_centers[:, None, :] - dlo_centers[None, :, :], axis=2)
    return bool(np.all(gaps >= robot.sphere_radii[mask][:, None] + dlo_radius))


def state_collision_free(
    dlo,
    q: Optional[np.ndarray],
    robot,
    grid: SdfGrid,
    margins: CollisionMargins,
) -> bool:
    """Obstacle clearance of the rod (and the robot when ``q`` is given) plus pairwise checks."""

    dlo_centers = dlo_sphere_centers(dlo.feature_points)
    if np.any(sphere_margins(grid, dlo_centers, margins.dlo_radius, margins.clearance) < -CLEARANCE_SLACK):
        return False
    if q is None:
        return True
    centers = robot.sphere_centers(q)
    if np.any(sphere_margins(grid, centers, robot.sphere_radii, margins.clearance) < -CLEARANCE_SLACK):
        return False
    if margins.check_self and not self_collision_free(robot, centers):
        return False
    if margins.check_robot_dlo and not robot_dlo_free(robot, centers, dlo_centers, margins.dlo_radius):
        return False
    return True


def node_collision_free(node, robot, grid: SdfGrid, margins: CollisionMargins) -> bool:
    return state_collision_free(node.dlo, node.q, robot, grid, margins)


__all__ = [
    "Box",
    "Capsule",
    "CollisionMargins",
    "EXTERIOR_SENTINEL",
    "Scene",
    "SdfGrid",
    "SdfSample",
    "Sphere",
    "build_sdf",
    "dlo_sphere_centers",
    "load_grid",
    "node_collision_free",
    "robot_dlo_free",
    "save_grid",
    "sdf_query",
    "self_collision_free",
    "sphere_margins",
    "state_collision_free",
]
