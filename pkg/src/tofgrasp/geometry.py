"""Rigid-body poses built on unit quaternions.

Internal units are meters and radians throughout the package. Euler angles
(fixed-axis XYZ roll-pitch-yaw) are accepted only at construction time.
Quaternions are stored (w, x, y, z) and renormalized after every composition
so the unit-norm invariant survives long chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def _quat_normalize(q: np.ndarray) -> np.ndarray:
    n = math.sqrt(float(q @ q))
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, both (w, x, y, z)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """3x3 rotation matrix for a unit quaternion."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / math.sqrt(float(axis @ axis))
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis XYZ convention: rotate about world x, then y, then z."""
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    return _quat_normalize(quat_multiply(qz, quat_multiply(qy, qx)))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate by `rotation`, then translate by `translation`."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = math.sqrt(float(q @ q))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation quaternion norm {n} too far from 1")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", q / n)
        t.setflags(write=False)
        self.rotation.setflags(write=False)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_rpy(translation, roll: float = 0.0, pitch: float = 0.0, yaw: float = 0.0) -> "Pose":
        return Pose(np.asarray(translation, dtype=float), quat_from_rpy(roll, pitch, yaw))

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def inverse(self) -> "Pose":
        qinv = quat_conjugate(self.rotation)
        rinv = quat_to_matrix(qinv)
        return Pose(-(rinv @ self.translation), qinv)


def compose(parent: Pose, child: Pose) -> Pose:
    """parent then child: world_point = parent * (child * local_point)."""
    q = _quat_normalize(quat_multiply(parent.rotation, child.rotation))
    t = parent.translation + quat_to_matrix(parent.rotation) @ child.translation
    return Pose(t, q)


def transform_point(pose: Pose, point) -> np.ndarray:
    return pose.translation + pose.matrix() @ np.asarray(point, dtype=float)


def transform_direction(pose: Pose, direction) -> np.ndarray:
    return pose.matrix() @ np.asarray(direction, dtype=float)


def rotate_about(pivot, roll: float, pitch: float, yaw: float, pose: Pose) -> Pose:
    """Rotate `pose` rigidly about the world point `pivot` by fixed-XYZ angles.

    Used for sampled grasp-pose perturbations: the gripper swings around the
    object's grasp point instead of spinning in place, which keeps the fingers
    aimed at the object for yaw values up to 45 degrees.
    """
    pivot = np.asarray(pivot, dtype=float)
    q = quat_from_rpy(roll, pitch, yaw)
    r = quat_to_matrix(q)
    return Pose(pivot + r @ (pose.translation - pivot), _quat_normalize(quat_multiply(q, pose.rotation)))
