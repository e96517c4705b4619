"""Serial-chain kinematics for the two arms holding the rod."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from dloplan.errors import FormatError, InvalidInputError
from dloplan.geometry import (
    axis_angle_matrix,
    make_transform,
    rotation_error,
    transform_from_xyz_rpy,
)
from dloplan.services.der_model import DloConfig, EndPoses


logger = logging.getLogger(__name__)

ROBOT_FORMAT = "dloplan.robot"
ROBOT_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class JointSpec:
    name: str
    axis: np.ndarray
    origin: np.ndarray
    lower: float
    upper: float


@dataclass(frozen=True, eq=False)
class CollisionSphere:
    link: int
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class IkSettings:
    """Pose tolerances and step control shared by IK and the closed-chain projection."""

    position_tolerance: float = 1e-4
    rotation_tolerance: float = 1e-3
    damping: float = 1e-6
    step_clamp: float = 0.2
    max_iter: int = 100
    attempts: int = 20

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "IkSettings":
        return cls(
            position_tolerance=float(config.get("IK_POSITION_TOLERANCE", cls.position_tolerance)),
            rotation_tolerance=float(config.get("IK_ROTATION_TOLERANCE", cls.rotation_tolerance)),
            damping=float(config.get("IK_DAMPING", cls.damping)),
            step_clamp=float(config.get("IK_STEP_CLAMP", cls.step_clamp)),
            max_iter=int(config.get("IK_MAX_ITER", cls.max_iter)),
            attempts=int(config.get("IK_ATTEMPTS", cls.attempts)),
        )


class FkResult(NamedTuple):
    pose: np.ndarray
    sphere_centers: np.ndarray
    joint_origins: np.ndarray
    joint_axes: np.ndarray


@dataclass(frozen=True, eq=False)
class ArmChain:
    """One serial arm: joint ``i`` applies ``origin_i`` then a rotation about ``axis_i``.

    Collision sphere ``link`` indices count the joints in front of the link, so
    link 0 is rigidly attached to the base and link ``n`` to the flange.
    """

    name: str
    base: np.ndarray
    joints: Tuple[JointSpec, ...]
    tool: np.ndarray
    spheres: Tuple[CollisionSphere, ...]

    def __post_init__(self) -> None:
        for joint in self.joints:
            if not joint.lower < joint.upper:
                raise InvalidInputError(f"joint {joint.name} has lower limit >= upper limit")
        for sphere in self.spheres:
            if not sphere.radius > 0.0:
                raise InvalidInputError("collision sphere radii must be positive")
            if not 0 <= sphere.link <= len(self.joints):
                raise InvalidInputError(f"sphere attached to unknown link {sphere.link}")
        object.__setattr__(self, "lower", np.array([joint.lower for joint in self.joints]))
        object.__setattr__(self, "upper", np.array([joint.upper for joint in self.joints]))
        object.__setattr__(self, "sphere_links", np.array([s.link for s in self.spheres], dtype=int))
        object.__setattr__(
            self, "sphere_offsets", np.array([s.center for s in self.spheres], dtype=float).reshape(-1, 3)
        )
        object.__setattr__(self, "sphere_radii", np.array([s.radius for s in self.spheres], dtype=float))
        reach = sum(np.linalg.norm(joint.origin[:3, 3]) for joint in self.joints)
        object.__setattr__(self, "reach", float(reach + np.linalg.norm(self.tool[:3, 3])))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def clip(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def within_limits(self, q: np.ndarray) -> bool:
        return bool(np.all(q >= self.lower) and np.all(q <= self.upper))


def forward_kinematics(chain: ArmChain, q: np.ndarray) -> FkResult:
    """Flange pose (tool offset applied) and world positions of every collision sphere."""

    n = chain.n_joints
    transform = np.array(chain.base, dtype=float)
    link_frames = np.empty((n + 1, 4, 4))
    link_frames[0] = transform
    origins = np.empty((n, 3))
    axes = np.empty((n, 3))
    for i, joint in enumerate(chain.joints):
        transform = transform @ joint.origin
        origins[i] = transform[:3, 3]
        axes[i] = transform[:3, :3] @ joint.axis
        transform = transform @ make_transform(axis_angle_matrix(joint.axis, float(q[i])), np.zeros(3))
        link_frames[i + 1] = transform
    pose = transform @ chain.tool
    frames = link_frames[chain.sphere_links]
    centers = np.einsum("nij,nj->ni", frames[:, :3, :3], chain.sphere_offsets) + frames[:, :3, 3]
    return FkResult(pose, centers, origins, axes)


def _jacobian_from_fk(fk: FkResult) -> np.ndarray:
    position = fk.pose[:3, 3]
    linear = np.cross(fk.joint_axes, position - fk.joint_origins)
    return np.vstack([linear.T, fk.joint_axes.T])


def geometric_jacobian(chain: ArmChain, q: np.ndarray) -> np.ndarray:
    """6 x n matrix mapping joint rates to the flange twist ``[v; w]``."""

    return _jacobian_from_fk(forward_kinematics(chain, q))


def sphere_jacobians(chain: ArmChain, q: np.ndarray, fk: Optional[FkResult] = None) -> np.ndarray:
    """``(n_spheres, 3, n)`` linear-velocity Jacobians of the sphere centers."""

    fk = fk or forward_kinematics(chain, q)
    n = chain.n_joints
    lever = fk.sphere_centers[:, None, :] - fk.joint_origins[None, :, :]
    columns = np.cross(fk.joint_axes[None, :, :], lever)
    active = np.arange(n)[None, :] < chain.sphere_links[:, None]
    columns = columns * active[:, :, None]
    return np.transpose(columns, (0, 2, 1))


def pose_error(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Stacked position error and axis-angle of ``R_target R_current^T``."""

    return np.concatenate([target[:3, 3] - current[:3, 3], rotation_error(target[:3, :3], current[:3, :3])])


def _within(error: np.ndarray, settings: IkSettings) -> bool:
    return (
        np.linalg.norm(error[:3]) <= settings.position_tolerance
        and np.linalg.norm(error[3:]) <= settings.rotation_tolerance
    )


def _damped_step(chain: ArmChain, q: np.ndarray, fk: FkResult, error: np.ndarray, settings: IkSettings) -> np.ndarray:
    jacobian = _jacobian_from_fk(fk)
    gram = jacobian @ jacobian.T + settings.damping * np.eye(6)
    step = jacobian.T @ np.linalg.solve(gram, error)
    step = np.clip(step, -settings.step_clamp, settings.step_clamp)
    return chain.clip(q + step)


def solve_ik(chain: ArmChain, seed: np.ndarray, target: np.ndarray, settings: Optional[IkSettings] = None) -> Optional[np.ndarray]:
    """Damped pseudo-inverse iteration from ``seed``; ``None`` when it does not converge."""

    settings = settings or IkSettings()
    q = chain.clip(np.asarray(seed, dtype=float))
    for iteration in range(settings.max_iter + 1):
        fk = forward_kinematics(chain, q)
        error = pose_error(target, fk.pose)
        if _within(error, settings):
            return q
        if iteration == settings.max_iter:
            break
        q = _damped_step(chain, q, fk, error, settings)
    return None


def ik_random(
    chain: ArmChain,
    target: np.ndarray,
    rng: np.random.Generator,
    attempts: Optional[int] = None,
    settings: Optional[IkSettings] = None,
) -> Optional[np.ndarray]:
    """Random-restart IK: uniform joint seeds within limits, first converged solution wins."""

    settings = settings or IkSettings()
    attempts = settings.attempts if attempts is None else attempts
    distance = np.linalg.norm(target[:3, 3] - chain.base[:3, 3])
    if distance > chain.reach + settings.position_tolerance:
        return None
    for _ in range(attempts):
        seed = rng.uniform(chain.lower, chain.upper)
        solution = solve_ik(chain, seed, target, settings)
        if solution is not None:
            return solution
    return None


# ---------------------------------------------------------------------------
# Grasp convention
# ---------------------------------------------------------------------------


def gripper_from_dlo_frame(frame: np.ndarray, side: str) -> np.ndarray:
    """Gripper rotation whose z axis points from the gripper into the rod.

    Left: ``[m1, m2, t]``. Right: ``[m1, -m2, -t]`` since ``t^m`` points out of the rod.
    """

    t, m1, m2 = frame[:, 0], frame[:, 1], frame[:, 2]
    if side == "left":
        return np.column_stack([m1, m2, t])
    return np.column_stack([m1, -m2, -t])


def dlo_frame_from_gripper(rotation: np.ndarray, side: str) -> np.ndarray:
    x, y, z = rotation[:, 0], rotation[:, 1], rotation[:, 2]
    if side == "left":
        return np.column_stack([z, x, y])
    return np.column_stack([-z, x, -y])


def gripper_targets(end_poses: EndPoses) -> Tuple[np.ndarray, np.ndarray]:
    left = make_transform(gripper_from_dlo_frame(end_poses.left_frame, "left"), end_poses.left_position)
    right = make_transform(gripper_from_dlo_frame(end_poses.right_frame, "right"), end_poses.right_position)
    return left, right


@dataclass(frozen=True, eq=False)
class DualArm:
    """Two arms; the stacked joint vector is ``q = [q_l; q_r]``."""

    name: str
    left: ArmChain
    right: ArmChain
    home: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        n_left = self.left.n_joints
        n_right = self.right.n_joints
        links = np.concatenate([self.left.sphere_links, self.right.sphere_links])
        arm = np.concatenate([np.zeros(len(self.left.spheres), int), np.ones(len(self.right.spheres), int)])
        i, j = np.triu_indices(len(links), k=1)
        keep = (arm[i] != arm[j]) | (np.abs(links[i] - links[j]) >= 3)
        object.__setattr__(self, "self_pairs", (i[keep], j[keep]))
        flange = np.concatenate([self.left.sphere_links == n_left, self.right.sphere_links == n_right])
        object.__setattr__(self, "dlo_check_mask", ~flange)
        object.__setattr__(
            self, "sphere_radii", np.concatenate([self.left.sphere_radii, self.right.sphere_radii])
        )
        home = np.zeros(n_left + n_right) if self.home is None else np.asarray(self.home, dtype=float)
        object.__setattr__(self, "home", home)

    @property
    def n_joints(self) -> int:
        return self.left.n_joints + self.right.n_joints

    @property
    def lower(self) -> np.ndarray:
        return np.concatenate([self.left.lower, self.right.lower])

    @property
    def upper(self) -> np.ndarray:
        return np.concatenate([self.left.upper, self.right.upper])

    def split(self, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_joints,):
            raise InvalidInputError(f"expected {self.n_joints} joint values, got shape {q.shape}")
        return q[: self.left.n_joints], q[self.left.n_joints :]

    def arms(self) -> Tuple[Tuple[str, ArmChain], Tuple[str, ArmChain]]:
        return ("left", self.left), ("right", self.right)

    def forward(self, q: np.ndarray) -> Tuple[FkResult, FkResult]:
        q_left, q_right = self.split(q)
        return forward_kinematics(self.left, q_left), forward_kinematics(self.right, q_right)

    def sphere_centers(self, q: np.ndarray) -> np.ndarray:
        fk_left, fk_right = self.forward(q)
        return np.vstack([fk_left.sphere_centers, fk_right.sphere_centers])

    def end_poses(self, q: np.ndarray) -> EndPoses:
        """Rod end poses implied by the grippers at ``q``."""

        fk_left, fk_right = self.forward(q)
        return EndPoses(
            fk_left.pose[:3, 3].copy(),
            dlo_frame_from_gripper(fk_left.pose[:3, :3], "left"),
            fk_right.pose[:3, 3].copy(),
            dlo_frame_from_gripper(fk_right.pose[:3, :3], "right"),
        )

    def stacked_jacobian(self, q: np.ndarray) -> np.ndarray:
        """12 x n block-diagonal map from joint rates to ``[v_l; w_l; v_r; w_r]``."""

        q_left, q_right = self.split(q)
        jacobian = np.zeros((12, self.n_joints))
        jacobian[:6, : self.left.n_joints] = geometric_jacobian(self.left, q_left)
        jacobian[6:, self.left.n_joints :] = geometric_jacobian(self.right, q_right)
        return jacobian

    def sphere_jacobian(self, q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Sphere centers ``(n_s, 3)`` and the ``3 n_s x n`` Jacobian of their stacked coordinates."""

        q_left, q_right = self.split(q)
        n_left = self.left.n_joints
        centers = []
        jacobian = np.zeros((3 * len(self.sphere_radii), self.n_joints))
        row = 0
        for chain, joints, column in ((self.left, q_left, 0), (self.right, q_right, n_left)):
            fk = forward_kinematics(chain, joints)
            block = sphere_jacobians(chain, joints, fk).reshape(-1, chain.n_joints)
            jacobian[row : row + block.shape[0], column : column + chain.n_joints] = block
            centers.append(fk.sphere_centers)
            row += block.shape[0]
        return np.vstack(centers), jacobian

    @classmethod
    def from_mapping(cls, payload: Mapping[str, Any]) -> "DualArm":
        if payload.get("format") != ROBOT_FORMAT or int(payload.get("version", 0)) != ROBOT_FORMAT_VERSION:
            raise FormatError(f"unsupported robot description (format {payload.get('format')!r})")
        try:
            chains = payload["chains"]
            arms = {}
            for side in ("left", "right"):
                entry = payload["arms"][side]
                arms[side] = _parse_chain(f"{payload.get('name', 'robot')}_{side}", chains[entry["chain"]], entry["base"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed robot description: {exc}") from exc
        home = payload.get("home")
        return cls(str(payload.get("name", "robot")), arms["left"], arms["right"], None if home is None else np.asarray(home, dtype=float))


def _parse_transform(entry: Mapping[str, Any]) -> np.ndarray:
    return transform_from_xyz_rpy(entry.get("xyz", (0.0, 0.0, 0.0)), entry.get("rpy", (0.0, 0.0, 0.0)))


def _parse_chain(name: str, chain: Mapping[str, Any], base: Mapping[str, Any]) -> ArmChain:
    joints = []
    for index, joint in enumerate(chain["joints"]):
        axis = np.asarray(joint.get("axis", (0.0, 0.0, 1.0)), dtype=float)
        lower, upper = joint["limits"]
        joints.append(
            JointSpec(
                name=str(joint.get("name", f"joint_{index + 1}")),
                axis=axis / np.linalg.norm(axis),
                origin=_parse_transform(joint.get("origin", {})),
                lower=float(lower),
                upper=float(upper),
            )
        )
    spheres = tuple(
        CollisionSphere(int(sphere["link"]), np.asarray(sphere["center"], dtype=float), float(sphere["radius"]))
        for sphere in chain.get("spheres", ())
    )
    return ArmChain(name, _parse_transform(base), tuple(joints), _parse_transform(chain.get("tool", {})), spheres)


def closed_chain_error(dual: DualArm, q: np.ndarray, cfg: DloConfig) -> Tuple[float, float]:
    """Worst position and orientation error between grippers and rod ends."""

    targets = gripper_targets(cfg.end_poses())
    position = rotation = 0.0
    for fk, target in zip(dual.forward(q), targets):
        error = pose_error(target, fk.pose)
        position = max(position, float(np.linalg.norm(error[:3])))
        rotation = max(rotation, float(np.linalg.norm(error[3:])))
    return position, rotation


def project_closed_chain(
    dual: DualArm,
    q: np.ndarray,
    cfg: DloConfig,
    settings: Optional[IkSettings] = None,
) -> Optional[np.ndarray]:
    """Move both arms onto the rod's end poses; ``None`` after ``max_iter`` iterations.

    Only an arm whose pose error exceeds the tolerance is stepped.
    """

    settings = settings or IkSettings()
    targets = gripper_targets(cfg.end_poses())
    q_left, q_right = dual.split(q)
    joints = [dual.left.clip(q_left), dual.right.clip(q_right)]
    chains = (dual.left, dual.right)
    for iteration in range(settings.max_iter + 1):
        converged = True
        for index, (chain, target) in enumerate(zip(chains, targets)):
            fk = forward_kinematics(chain, joints[index])
            error = pose_error(target, fk.pose)
            if _within(error, settings):
                continue
            converged = False
            if iteration < settings.max_iter:
                joints[index] = _damped_step(chain, joints[index], fk, error, settings)
        if converged:
            return np.concatenate(joints)
    return None


def random_dual_ik(
    dual: DualArm,
    cfg: DloConfig,
    rng: np.random.Generator,
    attempts: Optional[int] = None,
    settings: Optional[IkSettings] = None,
) -> Optional[np.ndarray]:
    """Random IK for both grippers on the rod's end poses."""

    solutions = []
    for chain, target in zip((dual.left, dual.right), gripper_targets(cfg.end_poses())):
        solution = ik_random(chain, target, rng, attempts, settings)
        if solution is None:
            return None
        solutions.append(solution)
    return np.concatenate(solutions)


__all__ = [
    "ArmChain",
    "CollisionSphere",
    "DualArm",
    "FkResult",
    "IkSettings",
    "JointSpec",
    "closed_chain_error",
    "dlo_frame_from_gripper",
    "forward_kinematics",
    "geometric_jacobian",
    "gripper_from_dlo_frame",
    "gripper_targets",
    "ik_random",
    "pose_error",
    "project_closed_chain",
    "random_dual_ik",
    "solve_ik",
    "sphere_jacobians",
]
