"""Linear motion model of the feature points under end-effector twists."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from dloplan.errors import DimensionMismatchError, JacobianEstimationError, ProjectionFailedError
from dloplan.services.der_model import DloConfig, DloParams, EndPoses, ProjectionSettings, forward_pred


logger = logging.getLogger(__name__)

TWIST_DIM = 12
DEAD_BAND = 1e-4
MODEL = "model"
ADAPTED = "adapted"


@dataclass(frozen=True, eq=False)
class DloJacobian:
    """``3m x 12`` map from ``[v_l; w_l; v_r; w_r]`` to stacked feature velocities."""

    matrix: np.ndarray
    source: str = MODEL

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != TWIST_DIM or matrix.shape[0] % 3:
            raise DimensionMismatchError(f"Jacobian must be 3m x {TWIST_DIM}, got {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise JacobianEstimationError("Jacobian has non-finite entries")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def segment_count(self) -> int:
        return self.matrix.shape[0] // 3

    def predict(self, twist: np.ndarray) -> np.ndarray:
        """Feature-point velocities, shape ``(m, 3)``."""

        return (self.matrix @ np.asarray(twist, dtype=float)).reshape(-1, 3)


def perturb_end_poses(poses: EndPoses, twist: np.ndarray, dt: float) -> EndPoses:
    """Move both grasped ends by ``twist * dt``; angular parts are world-frame rates."""

    twist = np.asarray(twist, dtype=float)
    if twist.shape != (TWIST_DIM,):
        raise DimensionMismatchError(f"twist must have {TWIST_DIM} entries")
    left_turn = Rotation.from_rotvec(twist[3:6] * dt).as_matrix()
    right_turn = Rotation.from_rotvec(twist[9:12] * dt).as_matrix()
    return EndPoses(
        poses.left_position + twist[0:3] * dt,
        left_turn @ poses.left_frame,
        poses.right_position + twist[6:9] * dt,
        right_turn @ poses.right_frame,
    )


def estimate_jacobian(
    cfg: DloConfig,
    params: DloParams,
    delta: float = 1e-3,
    settings: Optional[ProjectionSettings] = None,
) -> DloJacobian:
    """Central differences of ``forward_pred`` along the twelve unit twist directions."""

    poses = cfg.end_poses()
    columns = []
    try:
        for j in range(TWIST_DIM):
            direction = np.zeros(TWIST_DIM)
            direction[j] = 1.0
            ahead = forward_pred(cfg, perturb_end_poses(poses, direction, delta), params, settings)
            behind = forward_pred(cfg, perturb_end_poses(poses, direction, -delta), params, settings)
            columns.append((ahead.feature_points - behind.feature_points).ravel() / (2.0 * delta))
    except ProjectionFailedError as exc:
        raise JacobianEstimationError(f"perturbed projection failed: {exc}") from exc
    return DloJacobian(np.column_stack(columns), MODEL)


def adapt(
    jacobian: DloJacobian,
    twist: np.ndarray,
    displacement: np.ndarray,
    dt: float,
    forgetting: float = 0.5,
    dead_band: float = DEAD_BAND,
) -> DloJacobian:
    """Broyden rank-one correction toward the observed feature motion."""

    twist = np.asarray(twist, dtype=float)
    norm_sq = float(twist @ twist)
    if np.sqrt(norm_sq) <= dead_band or dt <= 0.0:
        return jacobian
    observed = np.asarray(displacement, dtype=float).ravel() / dt
    residual = observed - jacobian.matrix @ twist
    correction = forgetting * np.outer(residual, twist) / norm_sq
    return DloJacobian(jacobian.matrix + correction, ADAPTED)


__all__ = [
    "ADAPTED",
    "DEAD_BAND",
    "DloJacobian",
    "MODEL",
    "TWIST_DIM",
    "adapt",
    "estimate_jacobian",
    "perturb_end_poses",
]
