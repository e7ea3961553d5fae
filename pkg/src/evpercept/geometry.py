"""Pinhole intrinsics, rigid poses and the projection primitives.

Conventions: a :class:`Pose` maps points from its own frame into the parent
frame, ``p_parent = R @ p + t``.  A camera pose ``^W T_E`` is therefore the
camera-to-world transform.  Camera axes are x right, y down, z forward.
"""

from __future__ import annotations

import dataclasses
import pathlib
from typing import Iterable, Union

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

ArrayLike = Union[np.ndarray, Iterable[float]]


class BehindCameraError(ValueError):
    """A point with non-positive depth was projected."""


class InvalidDepthError(ValueError):
    """Back-projection was requested with a non-positive depth."""


def _frozen(a: ArrayLike, shape: tuple[int, ...]) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the sensor")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def normalize(self, u, v):
        """Pixel coordinates to normalized image coordinates (x/z, y/z)."""
        return (np.asarray(u, dtype=np.float64) - self.cx) / self.fx, (
            np.asarray(v, dtype=np.float64) - self.cy
        ) / self.fy

    def denormalize(self, x, y):
        return self.fx * np.asarray(x) + self.cx, self.fy * np.asarray(y) + self.cy


@dataclasses.dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_quaternion(cls, q_wxyz: ArrayLike, translation: ArrayLike) -> "Pose":
        qw, qx, qy, qz = np.asarray(q_wxyz, dtype=np.float64)
        return cls(Rotation.from_quat([qx, qy, qz, qw]).as_matrix(), translation)

    def quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with non-negative w."""
        qx, qy, qz, qw = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([qw, qx, qy, qz])
        return -q if qw < 0 else q

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: "Pose") -> "Pose":
        return compose(self, other)


def project(K: Intrinsics, p: ArrayLike) -> np.ndarray:
    """Project camera-frame point(s) of shape (3,) or (N, 3) to pixels."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point lies behind the camera (z <= 0)")
    u = K.fx * p[..., 0] / z + K.cx
    v = K.fy * p[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1)


def backproject(K: Intrinsics, u, v, d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise InvalidDepthError("depth must be positive")
    x, y = K.normalize(u, v)
    return np.stack(np.broadcast_arrays(x * d, y * d, d), axis=-1)


def transform(T: Pose, p: ArrayLike) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return p @ T.rotation.T + T.translation


def inverse(T: Pose) -> Pose:
    rt = T.rotation.T
    return Pose(rt, -rt @ T.translation)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense."""
    u, _, vt = np.linalg.svd(R)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def compose(T1: Pose, T2: Pose) -> Pose:
    """``T1 ∘ T2``: apply ``T2`` first."""
    return Pose(orthonormalize(T1.rotation @ T2.rotation), T1.rotation @ T2.translation + T1.translation)


class PoseTrajectory:
    """Time-indexed poses with linear/slerp interpolation."""

    def __init__(self, times: ArrayLike, poses: list[Pose]):
        self.times = np.asarray(times, dtype=np.float64)
        if len(self.times) != len(poses) or len(poses) == 0:
            raise ValueError("need one pose per timestamp")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("pose timestamps must be strictly increasing")
        self.poses = list(poses)
        self._translations = np.array([p.translation for p in poses])
        self._rotations = Rotation.from_matrix(np.array([p.rotation for p in poses]))
        self._slerp = Slerp(self.times, self._rotations) if len(poses) > 1 else None

    def __len__(self):
        return len(self.poses)

    def at(self, t: float) -> Pose:
        t = float(np.clip(t, self.times[0], self.times[-1]))
        if self._slerp is None:
            return self.poses[0]
        trans = np.array([np.interp(t, self.times, self._translations[:, k]) for k in range(3)])
        return Pose(self._slerp([t]).as_matrix()[0], trans)

    def velocity(self, t0: float, t1: float) -> np.ndarray:
        """Mean world-frame velocity of the origin over [t0, t1]."""
        if t1 <= t0:
            raise ValueError("empty interval")
        return (self.at(t1).translation - self.at(t0).translation) / (t1 - t0)

    def transformed(self, extrinsic: Pose) -> "PoseTrajectory":
        """Trajectory of a rigidly attached frame, ``T_W_child = T_W_self ∘ extrinsic``."""
        return PoseTrajectory(self.times, [compose(p, extrinsic) for p in self.poses])


def read_pose_file(path: Union[str, pathlib.Path]) -> PoseTrajectory:
    """Parse ``t qw qx qy qz tx ty tz`` lines."""
    rows = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValueError(f"{path}:{lineno}: expected 8 fields, got {len(parts)}")
            try:
                rows.append([float(x) for x in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no poses")
    data = np.array(rows)
    poses = [Pose.from_quaternion(r[1:5], r[5:8]) for r in data]
    return PoseTrajectory(data[:, 0], poses)


def write_pose_file(path: Union[str, pathlib.Path], times: ArrayLike, poses: list[Pose]) -> None:
    with open(path, "w") as f:
        f.write("# t qw qx qy qz tx ty tz\n")
        for t, pose in zip(times, poses):
            q = pose.quaternion()
            vals = " ".join(f"{x:.12f}" for x in (*q, *pose.translation))
            f.write(f"{t:.9f} {vals}\n")
