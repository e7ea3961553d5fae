"""Ego-motion compensation of buffered events.

Every event of a window is warped to the camera pose at the window start
``t0``.  The warp for an event at time ``t`` is looked up in a table of
per-millisecond buckets holding the relative rotation
``R_e = exp([ω̄] τ)`` and the world-frame displacement ``v τ`` of the
camera, with ``τ`` the bucket midpoint offset from ``t0``.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import pathlib
from typing import Optional, Union

import numba
import numpy as np
import pandas as pd

from .events import EventBuffer
from .geometry import Intrinsics, Pose

BUCKET = 1e-3


class MissingImuError(ValueError):
    """No inertial sample inside the compensation window."""


class Mode(str, enum.Enum):
    NONE = "none"
    ROTATION = "rotation"
    ROTATION_TRANSLATION = "rotation+translation"


@dataclasses.dataclass(frozen=True)
class EgoMotionSample:
    t: float
    angular_velocity: np.ndarray
    linear_velocity: np.ndarray
    pose: Optional[Pose] = None


@dataclasses.dataclass(frozen=True)
class ImuData:
    """Gyro (rad/s, camera frame) and accelerometer (m/s², camera frame) samples."""

    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def window(self, t0: float, t1: float) -> np.ndarray:
        a = np.searchsorted(self.t, t0, side="left")
        b = np.searchsorted(self.t, t1, side="right")
        return self.gyro[a:b]

    def rotated(self, R_cam_imu: np.ndarray) -> "ImuData":
        """Express samples in another frame via a fixed extrinsic rotation."""
        return ImuData(self.t, self.gyro @ R_cam_imu.T, self.accel @ R_cam_imu.T)


@dataclasses.dataclass(frozen=True)
class VelocityData:
    t: np.ndarray
    v: np.ndarray

    def mean(self, t0: float, t1: float) -> np.ndarray:
        mask = (self.t >= t0) & (self.t <= t1)
        if not np.any(mask):
            idx = int(np.clip(np.searchsorted(self.t, 0.5 * (t0 + t1)), 0, len(self.t) - 1))
            return self.v[idx].copy()
        return self.v[mask].mean(axis=0)


def average_angular_velocity(samples) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if len(samples) == 0:
        raise MissingImuError("no IMU samples in window")
    return samples.mean(axis=0)


def skew(w) -> np.ndarray:
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


def rodrigues(axis_angle) -> np.ndarray:
    """Rotation matrix for a rotation vector (angle = norm, axis = direction)."""
    r = np.asarray(axis_angle, dtype=np.float64)
    theta = float(np.linalg.norm(r))
    K = skew(r)
    if theta < 1e-8:
        # second-order series keeps orthonormality to machine precision here
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + (math.sin(theta) / theta) * K + ((1.0 - math.cos(theta)) / theta**2) * (K @ K)


def _rotations_about(omega: np.ndarray, taus: np.ndarray) -> np.ndarray:
    """``rodrigues(omega * tau)`` for every ``tau``; the axis is shared, so one skew matrix serves all."""
    rate = float(np.linalg.norm(omega))
    if rate == 0.0:
        return np.tile(np.eye(3), (len(taus), 1, 1))
    K = skew(omega / rate)
    theta = rate * taus
    return np.eye(3) + np.sin(theta)[:, None, None] * K + (1.0 - np.cos(theta))[:, None, None] * (K @ K)


@dataclasses.dataclass(frozen=True)
class WarpTable:
    """Per-bucket relative rotation and world-frame camera displacement."""

    t0: float
    step: float
    taus: np.ndarray
    rotations: np.ndarray
    offsets: np.ndarray

    def __len__(self) -> int:
        return len(self.taus)

    def bucket(self, t) -> np.ndarray:
        k = np.floor((np.asarray(t) - self.t0) / self.step).astype(np.int64)
        return np.clip(k, 0, len(self.taus) - 1)


def n_buckets(dt: float, step: float = BUCKET) -> int:
    return max(1, int(math.ceil(dt / step - 1e-9)))


def build_warp_table(omega, v, dt: float, t0: float = 0.0, step: float = BUCKET) -> WarpTable:
    if dt <= 0:
        raise ValueError("window length must be positive")
    omega = np.asarray(omega, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n = n_buckets(dt, step)
    taus = (np.arange(n) + 0.5) * step
    rotations = _rotations_about(omega, taus)
    offsets = taus[:, None] * v[None, :]
    for a in (taus, rotations, offsets):
        a.setflags(write=False)
    return WarpTable(float(t0), step, taus, rotations, offsets)


@dataclasses.dataclass(frozen=True)
class CompensatedEvents:
    """Warped (sub-pixel) event coordinates with their original timestamps.

    ``valid`` is false for events whose warped ray points behind the
    camera.  ``translated`` marks events that received the translational
    warp; the rest were rotation-only.
    """

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    valid: np.ndarray
    translated: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    def in_frame(self, width: int, height: int) -> np.ndarray:
        xi, yi = np.rint(self.x), np.rint(self.y)
        return self.valid & (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)


@numba.njit(cache=True)
def _warp_kernel(x, y, t, edges, rotations, offsets, depth, fx, fy, cx, cy, out_u, out_v, out_valid):
    """Warp sorted events bucket by bucket; ``depth <= 0`` means rotation only."""
    k = 0
    last = edges.shape[0]
    for i in range(t.shape[0]):
        while k < last and t[i] >= edges[k]:
            k += 1
        X = (x[i] - cx) / fx
        Y = (y[i] - cy) / fy
        Z = 1.0
        d = depth[i]
        if d > 0.0:
            X *= d
            Y *= d
            Z = d
        R = rotations[k]
        wx = R[0, 0] * X + R[0, 1] * Y + R[0, 2] * Z
        wy = R[1, 0] * X + R[1, 1] * Y + R[1, 2] * Z
        wz = R[2, 0] * X + R[2, 1] * Y + R[2, 2] * Z
        if d > 0.0:
            wx += offsets[k, 0]
            wy += offsets[k, 1]
            wz += offsets[k, 2]
        if wz > 1e-9:
            out_u[i] = fx * wx / wz + cx
            out_v[i] = fy * wy / wz + cy
            out_valid[i] = True
        else:
            out_u[i] = fx * wx + cx
            out_v[i] = fy * wy + cy
            out_valid[i] = False


def _warp(ev, table: WarpTable, K: Intrinsics, offsets_cam: np.ndarray, depth: np.ndarray):
    n = len(ev)
    u, v, valid = np.empty(n), np.empty(n), np.empty(n, dtype=np.bool_)
    edges = table.t0 + table.step * np.arange(1, len(table))
    _warp_kernel(ev.x, ev.y, ev.t, edges, np.ascontiguousarray(table.rotations), np.ascontiguousarray(offsets_cam),
                 depth, float(K.fx), float(K.fy), float(K.cx), float(K.cy), u, v, valid)
    return u, v, valid


def identity_compensation(buffer: EventBuffer) -> CompensatedEvents:
    ev = buffer.events
    n = len(ev)
    return CompensatedEvents(
        ev.x.astype(np.float64), ev.y.astype(np.float64), ev.t,
        np.ones(n, dtype=bool), np.zeros(n, dtype=bool),
    )


def compensate_rotation(buffer: EventBuffer, table: WarpTable, K: Intrinsics) -> CompensatedEvents:
    """Rotate each event's ray into the window-start orientation and reproject."""
    ev = buffer.events
    n = len(ev)
    if n == 0:
        return identity_compensation(buffer)
    u, v, valid = _warp(ev, table, K, np.zeros((len(table), 3)), np.zeros(n))
    return CompensatedEvents(u, v, ev.t, valid, np.zeros(n, dtype=bool))


def lookup_depth(depth_image: Optional[np.ndarray], x, y) -> np.ndarray:
    """Depth at integer event pixels; 0 where unavailable."""
    x = np.asarray(x, dtype=np.int64)
    if depth_image is None:
        return np.zeros(len(x))
    return depth_image[np.asarray(y, dtype=np.int64), x]


def compensate_translation(
    buffer: EventBuffer,
    table: WarpTable,
    K: Intrinsics,
    pose_t0: Pose,
    depth,
) -> CompensatedEvents:
    """Rotation + translation warp using per-event depth.

    ``depth`` holds the camera-frame depth of each event (0 or NaN when
    unknown); such events fall back to the rotation-only warp.  The
    camera displacement ``v τ`` is given in the world frame and brought
    into the window-start camera frame through ``pose_t0``.
    """
    ev = buffer.events
    n = len(ev)
    if n == 0:
        return identity_compensation(buffer)
    depth = np.nan_to_num(np.asarray(depth, dtype=np.float64), nan=0.0)
    offsets_cam = table.offsets @ pose_t0.rotation  # rows: R^T (v tau)
    u, v, valid = _warp(ev, table, K, offsets_cam, depth)
    return CompensatedEvents(u, v, ev.t, valid, depth > 0)


def compensate(
    buffer: EventBuffer,
    mode: Mode,
    K: Intrinsics,
    omega=None,
    velocity=None,
    pose_t0: Optional[Pose] = None,
    depth_image: Optional[np.ndarray] = None,
) -> CompensatedEvents:
    mode = Mode(mode)
    if mode is Mode.NONE:
        return identity_compensation(buffer)
    v = np.zeros(3) if velocity is None else velocity
    table = build_warp_table(omega, v, buffer.dt, buffer.t0)
    if mode is Mode.ROTATION:
        return compensate_rotation(buffer, table, K)
    depth = lookup_depth(depth_image, buffer.events.x, buffer.events.y)
    return compensate_translation(buffer, table, K, pose_t0 or Pose.identity(), depth)


def _read_csv(path, names) -> np.ndarray:
    try:
        df = pd.read_csv(path, comment="#", header=None, names=names, dtype=np.float64)
    except (ValueError, pd.errors.ParserError) as exc:
        raise ValueError(f"{path}: {exc}") from None
    if df.isna().any().any():
        row = int(np.flatnonzero(df.isna().any(axis=1).to_numpy())[0])
        raise ValueError(f"{path}:{row + 1}: missing field")
    return df.to_numpy()


def read_imu_file(path: Union[str, pathlib.Path]) -> ImuData:
    d = _read_csv(path, ["t", "wx", "wy", "wz", "ax", "ay", "az"])
    return ImuData(d[:, 0], d[:, 1:4], d[:, 4:7])


def write_imu_file(path, imu: ImuData) -> None:
    df = pd.DataFrame(np.column_stack([imu.t, imu.gyro, imu.accel]))
    with open(path, "w") as f:
        f.write("# t,wx,wy,wz,ax,ay,az\n")
        df.to_csv(f, header=False, index=False, float_format="%.9f", lineterminator="\n")


def read_velocity_file(path) -> VelocityData:
    d = _read_csv(path, ["t", "vx", "vy", "vz"])
    return VelocityData(d[:, 0], d[:, 1:4])


def write_velocity_file(path, vel: VelocityData) -> None:
    df = pd.DataFrame(np.column_stack([vel.t, vel.v]))
    with open(path, "w") as f:
        f.write("# t,vx,vy,vz\n")
        df.to_csv(f, header=False, index=False, float_format="%.9f", lineterminator="\n")
