"""Constant-acceleration Kalman tracking of the detection center.

State layout is ``(x, y, vx, vy, ax, ay)`` in pixels, px/s and px/s².
The model is linear, so the plain Kalman equations are used.
"""

from __future__ import annotations

import dataclasses
import enum
import pathlib
from typing import Optional, Sequence, Union

import numpy as np

H = np.zeros((2, 6))
H[0, 0] = H[1, 1] = 1.0


class TrackOrderError(ValueError):
    """Prediction requested for a time before the last update."""


class Association(enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    NEW_TRACK = "new_track"


@dataclasses.dataclass(frozen=True)
class TrackerConfig:
    jerk_psd: float = 1e3
    meas_sigma: float = 2.0
    init_sigma: tuple = (5.0, 5.0, 100.0, 100.0, 500.0, 500.0)
    max_dt: float = 0.1
    max_dist: float = 50.0
    miss_limit: int = 3


@dataclasses.dataclass(frozen=True)
class AssociationGate:
    max_dt: float = 0.1
    max_dist: float = 50.0

    def __post_init__(self):
        if self.max_dt <= 0 or self.max_dist <= 0:
            raise ValueError("gate bounds must be positive")


@dataclasses.dataclass(frozen=True)
class TrackState:
    x: np.ndarray
    P: np.ndarray
    last_update: float
    miss_count: int = 0
    n_updates: int = 0

    @property
    def position(self) -> np.ndarray:
        return self.x[:2]

    @property
    def velocity(self) -> np.ndarray:
        return self.x[2:4]

    @property
    def acceleration(self) -> np.ndarray:
        return self.x[4:6]


def transition(dt: float) -> np.ndarray:
    f = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
    return np.kron(f, np.eye(2))


def process_noise(dt: float, jerk_psd: float) -> np.ndarray:
    """Discretized white-jerk noise."""
    q = jerk_psd * np.array(
        [
            [dt**5 / 20, dt**4 / 8, dt**3 / 6],
            [dt**4 / 8, dt**3 / 3, dt**2 / 2],
            [dt**3 / 6, dt**2 / 2, dt],
        ]
    )
    return np.kron(q, np.eye(2))


def init_track(center, t: float, config: TrackerConfig = TrackerConfig()) -> TrackState:
    x = np.zeros(6)
    x[:2] = center
    P = np.diag(np.square(np.asarray(config.init_sigma, dtype=np.float64)))
    return TrackState(x, P, float(t), 0, 1)


def predict(track: TrackState, t: float, jerk_psd: float = 1e3) -> TrackState:
    dt = float(t) - track.last_update
    if dt < 0:
        raise TrackOrderError(f"cannot predict {-dt:.6f} s into the past")
    F = transition(dt)
    P = F @ track.P @ F.T + process_noise(dt, jerk_psd)
    return dataclasses.replace(track, x=F @ track.x, P=0.5 * (P + P.T), last_update=float(t))


def update(track: TrackState, center, t: float, meas_sigma: float = 2.0, jerk_psd: float = 1e3) -> TrackState:
    """Predict to ``t`` and fuse a position measurement (Joseph form)."""
    pred = predict(track, t, jerk_psd) if t > track.last_update else track
    R = np.eye(2) * meas_sigma**2
    innovation = np.asarray(center, dtype=np.float64) - H @ pred.x
    S = H @ pred.P @ H.T + R
    K = pred.P @ H.T @ np.linalg.pinv(S)
    x = pred.x + K @ innovation
    A = np.eye(6) - K @ H
    P = A @ pred.P @ A.T + K @ R @ K.T
    return TrackState(x, 0.5 * (P + P.T), float(t), 0, pred.n_updates + 1)


def associate(track: Optional[TrackState], center, t: float, gate: AssociationGate, miss_limit: int = 3) -> Association:
    if track is None:
        return Association.NEW_TRACK
    dt = float(t) - track.last_update
    if dt > gate.max_dt or dt < 0:
        return Association.NEW_TRACK
    predicted = transition(dt) @ track.x
    dist = float(np.linalg.norm(np.asarray(center, dtype=np.float64) - predicted[:2]))
    if dist <= gate.max_dist:
        return Association.ACCEPT
    if track.miss_count + 1 > miss_limit:
        return Association.NEW_TRACK
    return Association.REJECT


class Tracker:
    """Single-object track owner: gating, initialization and updates."""

    def __init__(self, config: TrackerConfig = TrackerConfig()):
        self.config = config
        self.gate = AssociationGate(config.max_dt, config.max_dist)
        self.track: Optional[TrackState] = None
        self.track_id = -1

    def step(self, center, t: float) -> Association:
        decision = associate(self.track, center, t, self.gate, self.config.miss_limit)
        if decision is Association.NEW_TRACK:
            self.track = init_track(center, t, self.config)
            self.track_id += 1
        elif decision is Association.ACCEPT:
            self.track = update(self.track, center, t, self.config.meas_sigma, self.config.jerk_psd)
        else:
            self.track = dataclasses.replace(self.track, miss_count=self.track.miss_count + 1)
        return decision

    def predicted_position(self, t: float) -> Optional[np.ndarray]:
        if self.track is None:
            return None
        # the mean extrapolates in either direction; depth frames can precede the last update
        return (transition(float(t) - self.track.last_update) @ self.track.x)[:2]


def write_track_log(path: Union[str, pathlib.Path], states: Sequence[TrackState]) -> None:
    with open(path, "w") as f:
        f.write("# t,x,y,vx,vy,ax,ay,trace(P)\n")
        for s in states:
            vals = ",".join(f"{v:.6f}" for v in s.x)
            f.write(f"{s.last_update:.9f},{vals},{np.trace(s.P):.6f}\n")
