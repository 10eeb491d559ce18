"""SE(3) rigid transforms and the rotation-angle measure used by the gate.

Tracking code stores poses in the world-to-camera convention:
``x_cam = R @ x_world + t``. Trajectory output converts to camera-to-world
at the evaluation boundary (see :mod:`spinvo.evaluation`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def is_rotation_matrix(r: np.ndarray, tol: float = 1e-6) -> bool:
    """True if ``r`` is a proper rotation: orthonormal with determinant +1."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    return (
        np.abs(r.T @ r - np.eye(3)).max() < tol
        and abs(np.linalg.det(r) - 1.0) < tol
    )


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform: 3x3 rotation plus 3-vector translation.

    Instances are treated as immutable values; the stored arrays are
    defensive copies with the writeable flag cleared.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "PoseSE3":
        return PoseSE3(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "PoseSE3":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 homogeneous matrix, got {m.shape}")
        return PoseSE3(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix [R t; 0 1]."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (N, 3) batch."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def validate(self, tol: float = 1e-6) -> None:
        if not is_rotation_matrix(self.rotation, tol):
            raise ValueError("rotation block is not a proper rotation matrix")
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("translation has non-finite entries")

    def __repr__(self):
        return f"PoseSE3(R=\n{self.rotation},\nt={self.translation})"


def compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """Product of transforms: (compose(a, b))(x) == a(b(x))."""
    return PoseSE3(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: PoseSE3) -> PoseSE3:
    """Inverse transform: R' = R^T, t' = -R^T t."""
    rt = t.rotation.T
    return PoseSE3(rt, -rt @ t.translation)


def relative_pose(prev: PoseSE3, curr: PoseSE3) -> PoseSE3:
    """Motion between two world-to-camera poses of consecutive frames.

    Returns the transform taking previous-camera coordinates into
    current-camera coordinates: curr o prev^-1.
    """
    return compose(curr, inverse(prev))


def rotation_angle(r: np.ndarray) -> float:
    """Axis-angle magnitude of a rotation matrix, in [0, pi].

    The cosine argument is clamped into [-1, 1]: floating error can push
    (tr(R) - 1) / 2 past 1 for near-identity rotations, which would
    otherwise produce NaN.
    """
    c = (float(np.trace(np.asarray(r, dtype=float))) - 1.0) / 2.0
    return float(np.arccos(min(1.0, max(-1.0, c))))


def rotation_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues formula; ``axis`` need not be unit length."""
    axis = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(axis)
    if n == 0.0:
        if angle != 0.0:
            raise ValueError("zero axis with nonzero angle")
        return np.eye(3)
    k = axis / n
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1.0 - np.cos(angle)) * (kx @ kx)
