"""Small rigid-body helpers shared by the rod model, kinematics and planner."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from dloplan.errors import SingularCurvatureError

# Below this value of 1 + a.b two unit vectors are treated as antiparallel.
ANTIPARALLEL_TOLERANCE = 1e-12


def normalize(vector: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vector, axis=-1, keepdims=True)
    return vector / norm


def skew(vector: np.ndarray) -> np.ndarray:
    x, y, z = vector
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return the minimal rotation matrix taking unit vector ``a`` onto unit vector ``b``.

    The rotation axis is ``a x b``; equal vectors give the identity. Antiparallel
    vectors have no unique minimal rotation and raise ``SingularCurvatureError``.
    """

    cross = np.cross(a, b)
    cosine = float(np.dot(a, b))
    if 1.0 + cosine <= ANTIPARALLEL_TOLERANCE:
        raise SingularCurvatureError("cannot transport a frame between antiparallel tangents")
    k = skew(cross)
    return np.eye(3) + k + (k @ k) / (1.0 + cosine)


def rotate_about(vector: np.ndarray, axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of ``vector`` about the unit ``axis``."""

    cos_a = np.cos(angle)
    sin_a = np.sin(angle)
    return (
        vector * cos_a
        + np.cross(axis, vector) * sin_a
        + axis * np.dot(axis, vector) * (1.0 - cos_a)
    )


def signed_angle(u: np.ndarray, v: np.ndarray, axis: np.ndarray) -> float:
    """Angle that rotates ``u`` onto ``v`` about ``axis`` (right-hand rule), in (-pi, pi]."""

    return float(np.arctan2(np.dot(axis, np.cross(u, v)), np.dot(u, v)))


def wrap_angle(angle):
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def unwrap_near(angle: float, reference: float) -> float:
    """Shift ``angle`` by a multiple of 2*pi onto the branch closest to ``reference``."""

    return float(angle + 2.0 * np.pi * np.round((reference - angle) / (2.0 * np.pi)))


def axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    return Rotation.from_rotvec(np.asarray(axis, dtype=float) * angle).as_matrix()


def rotation_error(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Axis-angle vector of ``target @ current.T``."""

    return Rotation.from_matrix(target @ current.T).as_rotvec()


def rotation_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Geodesic angle between rotation matrices; accepts stacked ``(..., 3, 3)`` inputs."""

    relative = np.einsum("...ji,...jk->...ik", a, b)
    trace = np.trace(relative, axis1=-2, axis2=-1)
    return np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))


def orthonormalize(frame: np.ndarray) -> np.ndarray:
    """Project a nearly orthonormal matrix back onto SO(3)."""

    u, _, vt = np.linalg.svd(frame)
    result = u @ vt
    if np.linalg.det(result) < 0.0:
        u[:, -1] *= -1.0
        result = u @ vt
    return result


def make_transform(rotation: np.ndarray, translation: Sequence[float]) -> np.ndarray:
    transform = np.eye(4)
    transform[:3, :3] = rotation
    transform[:3, 3] = translation
    return transform


def transform_from_xyz_rpy(xyz: Sequence[float], rpy: Sequence[float]) -> np.ndarray:
    """Homogeneous transform from a translation and fixed-axis roll/pitch/yaw."""

    rotation = Rotation.from_euler("xyz", rpy).as_matrix()
    return make_transform(rotation, xyz)


__all__ = [
    "axis_angle_matrix",
    "make_transform",
    "normalize",
    "orthonormalize",
    "rotate_about",
    "rotation_between",
    "rotation_distance",
    "rotation_error",
    "signed_angle",
    "skew",
    "transform_from_xyz_rpy",
    "unwrap_near",
    "wrap_angle",
]
