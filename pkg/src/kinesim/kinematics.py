"""Forward kinematics, geometric Jacobians and Yoshikawa manipulability.

Every routine has a batched form working on ``(B, ...)`` arrays; the scalar
functions are thin wrappers over a batch of one.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParamsError
from .transforms import Pose, axis_angle, renormalize_batch
from .urdf import KinematicChain, RobotModel

MODES = ("full_6", "position_3")
MODE_ALIASES = {"full6": "full_6", "full_6": "full_6", "pos3": "position_3", "position_3": "position_3"}
SINGULAR_TOL = 1e-12


def canonical_mode(mode: str) -> str:
    try:
        return MODE_ALIASES[mode]
    except KeyError:
        raise InvalidParamsError(f"unknown jacobian mode {mode!r}; use one of {MODES}") from None


class Configuration(Mapping):
    """Joint values keyed by name, ordered like ``model.movable_joints``."""

    def __init__(self, model: RobotModel, values, enforce_limits: bool = False):
        values = np.array(values, dtype=float).reshape(-1)
        if values.shape != (model.dof,):
            raise InvalidParamsError(f"expected {model.dof} joint values, got {values.shape[0]}")
        if enforce_limits:
            bad = (values < model.lower_limits) | (values > model.upper_limits)
            if np.any(bad):
                names = [model.movable_joints[i].name for i in np.flatnonzero(bad)]
                raise InvalidParamsError(f"joint values outside limits: {names}")
        self.model = model
        self.values = values

    @classmethod
    def from_mapping(cls, model: RobotModel, mapping: Mapping, enforce_limits: bool = False):
        missing = [j.name for j in model.movable_joints if j.name not in mapping]
        if missing:
            raise InvalidParamsError(f"missing joint values: {missing}")
        return cls(model, [mapping[j.name] for j in model.movable_joints], enforce_limits)

    @classmethod
    def zeros(cls, model: RobotModel):
        return cls(model, model.zero_configuration())

    def __getitem__(self, name):
        return float(self.values[self.model.movable_index[name]])

    def __iter__(self):
        return (j.name for j in self.model.movable_joints)

    def __len__(self):
        return self.model.dof

    def __repr__(self):
        return f"Configuration({dict(self)})"


def _as_vector(model: RobotModel, q) -> np.ndarray:
    if isinstance(q, Configuration):
        values = q.values
    elif isinstance(q, Mapping):
        values = Configuration.from_mapping(model, q).values
    else:
        values = np.asarray(q, dtype=float).reshape(-1)
        if values.shape != (model.dof,):
            raise InvalidParamsError(f"expected {model.dof} joint values, got {values.shape[0]}")
    if np.any(np.isnan(values)):
        raise InvalidParamsError("configuration contains NaN")
    return values


def joint_motion(joint, values: np.ndarray) -> np.ndarray:
    """Homogeneous motion of a movable joint for a batch of joint values."""
    values = np.asarray(values, dtype=float)
    T = np.zeros(values.shape + (4, 4))
    axis = np.asarray(joint.axis, dtype=float)
    if joint.kind == "prismatic":
        T[..., 0, 0] = T[..., 1, 1] = T[..., 2, 2] = 1.0
        T[..., :3, 3] = values[..., None] * axis
    else:
        T[..., :3, :3] = axis_angle(axis, values)
    T[..., 3, 3] = 1.0
    return T


def link_transforms(model: RobotModel, Q: np.ndarray, base: np.ndarray | None = None) -> dict:
    """Batched whole-model FK: ``{link name: (B, 4, 4)}`` in the root (or ``base``) frame."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    B = Q.shape[0]
    root = np.broadcast_to(np.eye(4) if base is None else base, (B, 4, 4)).copy()
    out = {model.root_link: root}
    index = model.movable_index
    for joint in model.ordered_joints:
        T = out[joint.parent] @ joint.origin.as_matrix()
        if joint.movable:
            T = T @ joint_motion(joint, Q[:, index[joint.name]])
        out[joint.child] = renormalize_batch(T)
    return out


def forward_kinematics(model: RobotModel, q) -> dict:
    """Pose of every link in the root frame."""
    values = _as_vector(model, q)
    mats = link_transforms(model, values[None, :])
    return {name: Pose.from_matrix(T[0]) for name, T in mats.items()}


def _chain_q(chain: KinematicChain, Q) -> np.ndarray:
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.shape[-1] != chain.dof:
        raise InvalidParamsError(f"chain has {chain.dof} joints, got {Q.shape[-1]} values")
    return Q


def _chain_frames(chain: KinematicChain, Q: np.ndarray):
    """Joint frames (before motion) and tip transform for a batch."""
    B = Q.shape[0]
    T = np.broadcast_to(np.eye(4), (B, 4, 4)).copy()
    frames = []
    for i, joint in enumerate(chain.joints):
        T = T @ chain.pre_transforms[i]
        frames.append(T)
        T = renormalize_batch(T @ joint_motion(joint, Q[:, i]))
    return frames, renormalize_batch(T @ chain.tail)


def chain_fk_batch(chain: KinematicChain, Q) -> np.ndarray:
    Q = _chain_q(chain, Q)
    return _chain_frames(chain, Q)[1]


def chain_fk(chain: KinematicChain, q) -> Pose:
    """Tip pose in the chain's base frame."""
    return Pose.from_matrix(chain_fk_batch(chain, q)[0])


def jacobian_batch(chain: KinematicChain, Q) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(J, T_tip)`` with J of shape (B, 6, n): linear rows then angular rows."""
    Q = _chain_q(chain, Q)
    frames, tip = _chain_frames(chain, Q)
    B, n = Q.shape
    J = np.zeros((B, 6, n))
    p_tip = tip[:, :3, 3]
    for i, F in enumerate(frames):
        z = F[:, :3, :3] @ chain.axes[i]
        if chain.prismatic[i]:
            J[:, :3, i] = z
        else:
            J[:, :3, i] = np.cross(z, p_tip - F[:, :3, 3])
            J[:, 3:, i] = z
    return J, tip


@dataclass(frozen=True, eq=False)
class Jacobian:
    matrix: np.ndarray
    reference_point: np.ndarray
    mode: str = "full_6"

    @property
    def dof(self) -> int:
        return self.matrix.shape[1]


def geometric_jacobian(chain: KinematicChain, q, mode: str = "full_6") -> Jacobian:
    mode = canonical_mode(mode)
    J, tip = jacobian_batch(chain, q)
    M = J[0] if mode == "full_6" else J[0, :3]
    return Jacobian(M, tip[0, :3, 3].copy(), mode)


def jacobi_singular_values(A: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    """Singular values of a batch of matrices by one-sided (Hestenes) Jacobi rotations.

    Columns are orthogonalized pairwise; the singular values are the final
    column norms. Operates on whichever of A / A^T has fewer columns.
    Returned sorted descending, shape (B, min(m, n)).
    """
    A = np.array(A, dtype=float)
    squeeze = A.ndim == 2
    if squeeze:
        A = A[None]
    if A.shape[2] > A.shape[1]:
        A = np.swapaxes(A, 1, 2).copy()
    k = A.shape[2]
    eps = np.finfo(float).eps
    for _ in range(max_sweeps):
        rotated = False
        for p in range(k - 1):
            for r in range(p + 1, k):
                ap = A[:, :, p]
                ar = A[:, :, r]
                alpha = np.einsum("bi,bi->b", ap, ap)
                beta = np.einsum("bi,bi->b", ar, ar)
                gamma = np.einsum("bi,bi->b", ap, ar)
                need = np.abs(gamma) > eps * np.sqrt(alpha * beta)
                if not np.any(need):
                    continue
                rotated = True
                g = np.where(need, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * g)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                c = np.where(need, c, 1.0)[:, None]
                s = np.where(need, s, 0.0)[:, None]
                new_p = c * ap - s * ar
                new_r = s * ap + c * ar
                A[:, :, p] = new_p
                A[:, :, r] = new_r
        if not rotated:
            break
    sv = -np.sort(-np.linalg.norm(A, axis=1), axis=1)
    return sv[0] if squeeze else sv


def manipulability_from_jacobians(J: np.ndarray, mode: str = "full_6") -> np.ndarray:
    mode = canonical_mode(mode)
    M = J if mode == "full_6" else J[:, :3, :]
    sv = jacobi_singular_values(M)
    w = np.prod(sv, axis=1)
    return np.where(sv[:, -1] < SINGULAR_TOL, 0.0, w)


def manipulability_batch(chain: KinematicChain, Q, mode: str = "full_6") -> np.ndarray:
    if chain.dof < 1:
        raise InvalidParamsError("manipulability needs a chain with at least one joint")
    J, _ = jacobian_batch(chain, Q)
    return manipulability_from_jacobians(J, mode)


def manipulability(chain: KinematicChain, q, mode: str = "full_6") -> float:
    """Yoshikawa measure: the product of the Jacobian's singular values (0 when singular)."""
    return float(manipulability_batch(chain, q, mode)[0])
