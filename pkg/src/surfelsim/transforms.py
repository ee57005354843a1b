"""Rigid poses and their interpolation over time."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .errors import ContractViolation, OutOfRangeError

TIME_EPS = 1e-9


@dataclass(frozen=True)
class RigidPose:
    """Rotation (unit quaternion, scalar-last ``x, y, z, w``) plus translation.

    Maps local coordinates to the parent frame: ``x' = R x + t``.
    ``timestamp`` is None for a pose that holds at all times.
    """

    rotation: np.ndarray = (0.0, 0.0, 0.0, 1.0)
    translation: np.ndarray = (0.0, 0.0, 0.0)
    timestamp: float = None

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if q.shape != (4,) or t.shape != (3,):
            raise ContractViolation("pose needs a 4-quaternion and a 3-translation")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ContractViolation("pose quaternion is not unit length")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_matrix(cls, R, t, timestamp=None):
        return cls(Rotation.from_matrix(R).as_quat(), t, timestamp)

    @property
    def matrix(self):
        return Rotation.from_quat(self.rotation).as_matrix()

    def apply(self, pts):
        return np.asarray(pts, dtype=np.float64) @ self.matrix.T + self.translation


def interpolate_pose(poses, t):
    """Pose at time ``t``: slerp on rotation, lerp on translation.

    Exact keyframe times return the stored pose untouched.
    """
    if len(poses) == 1 and poses[0].timestamp is None:
        return poses[0]
    times = np.array([p.timestamp for p in poses], dtype=np.float64)
    if t < times[0] - TIME_EPS or t > times[-1] + TIME_EPS:
        raise OutOfRangeError(f"time {t} outside [{times[0]}, {times[-1]}]")
    hit = np.flatnonzero(times == t)
    if len(hit):
        return poses[hit[0]]
    if len(poses) == 1:
        return poses[0]
    i, w = bracket(times, t)
    if w == 0.0:
        return poses[i]
    rots = Rotation.from_quat(np.stack([poses[i].rotation, poses[i + 1].rotation]))
    rot = Slerp([0.0, 1.0], rots)([w])[0]
    trans = (1 - w) * poses[i].translation + w * poses[i + 1].translation
    return RigidPose(rot.as_quat(), trans, float(t))


def bracket(times, t):
    """Index ``i`` and weight ``w`` with ``t = (1-w) times[i] + w times[i+1]``."""
    times = np.asarray(times, dtype=np.float64)
    if len(times) == 1:
        return 0, 0.0
    i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
    w = float(np.clip((t - times[i]) / (times[i + 1] - times[i]), 0.0, 1.0))
    return i, w


def quat_to_matrix(q):
    """Batch scalar-last quaternions to rotation matrices."""
    return Rotation.from_quat(np.asarray(q, dtype=np.float64).reshape(-1, 4)).as_matrix()


def slerp_batch(q0, q1, w):
    """Row-wise slerp between quaternion arrays ``q0`` and ``q1`` (N, 4)."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64).copy()
    dot = np.sum(q0 * q1, axis=1)
    q1[dot < 0] *= -1
    dot = np.abs(dot)
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    sin = np.sin(theta)
    small = sin < 1e-9
    safe = np.where(small, 1.0, sin)
    a = np.where(small, 1 - w, np.sin((1 - w) * theta) / safe)
    b = np.where(small, w, np.sin(w * theta) / safe)
    q = a[:, None] * q0 + b[:, None] * q1
    return q / np.linalg.norm(q, axis=1, keepdims=True)
