"""Ballistic trajectory estimation from asynchronous event and depth observations.

The unknowns are the world-frame position and velocity at ``t0``; gravity
is known.  Event observations contribute reprojection residuals in
normalized image coordinates, depth observations the difference between
predicted and measured camera-frame depth.  Both use a Huber loss and the
problem is solved by damped Gauss-Newton (Levenberg-Marquardt).
"""

from __future__ import annotations

import dataclasses
import math
import pathlib
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import Pose

GRAVITY = (0.0, 0.0, -9.81)


class InsufficientObservationsError(ValueError):
    pass


class CheiralityError(ValueError):
    """The predicted object lies behind (or on) the camera plane."""


@dataclasses.dataclass(frozen=True)
class BallisticTrajectory:
    p0: np.ndarray
    v0: np.ndarray
    g: np.ndarray
    t0: float

    def __post_init__(self):
        for name in ("p0", "v0", "g"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.p0, self.v0])

    def with_params(self, x) -> "BallisticTrajectory":
        return BallisticTrajectory(x[:3], x[3:6], self.g, self.t0)

    def position(self, t) -> np.ndarray:
        tau = np.asarray(t, dtype=np.float64) - self.t0
        tau_ = tau[..., None]
        return self.p0 + tau_ * self.v0 + 0.5 * self.g * tau_**2

    def velocity(self, t) -> np.ndarray:
        tau = (np.asarray(t, dtype=np.float64) - self.t0)[..., None]
        return self.v0 + tau * self.g

    def rebased(self, t0: float) -> "BallisticTrajectory":
        """Same motion, parameterized at another reference time."""
        return BallisticTrajectory(self.position(t0), self.velocity(t0), self.g, t0)


@dataclasses.dataclass(frozen=True)
class EventObservation:
    """Normalized image coordinates of the object seen from ``pose`` (camera-to-world)."""

    t: float
    u: float
    v: float
    pose: Pose


@dataclasses.dataclass(frozen=True)
class DepthObservation:
    """Camera-frame depth ``d`` of the object seen from ``pose`` (camera-to-world)."""

    t: float
    d: float
    pose: Pose

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("depth must be positive")


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    huber_event: float = 0.01
    huber_depth: float = 0.10
    weight_event: float = 1.0
    weight_depth: float = 1.0
    max_iterations: int = 100
    gradient_tol: float = 1e-14
    step_tol: float = 1e-12
    lambda0: float = 1e-3
    lambda_up: float = 10.0
    lambda_down: float = 10.0
    lambda_max: float = 1e12
    eps_z: float = 0.01
    default_depth: float = 5.0


@dataclasses.dataclass
class EstimateResult:
    trajectory: BallisticTrajectory
    cost: float
    iterations: int
    converged: bool
    status: str
    event_residuals: np.ndarray
    depth_residuals: np.ndarray
    skipped: int
    cost_history: list


def ballistic_position(traj: BallisticTrajectory, t) -> np.ndarray:
    return traj.position(t)


def predict(traj: BallisticTrajectory, t: float) -> np.ndarray:
    if t < traj.t0:
        raise ValueError("prediction time precedes the trajectory start")
    return traj.position(t)


def _camera_point(traj: BallisticTrajectory, t: float, pose: Pose) -> np.ndarray:
    # world -> camera: R^T (p - c)
    return pose.rotation.T @ (traj.position(t) - pose.translation)


def event_residual(traj: BallisticTrajectory, obs: EventObservation, eps_z: float = 0.01) -> np.ndarray:
    x, y, z = _camera_point(traj, obs.t, obs.pose)
    if z <= eps_z:
        raise CheiralityError(f"object behind camera at t={obs.t}")
    return np.array([x / z - obs.u, y / z - obs.v])


def depth_residual(traj: BallisticTrajectory, obs: DepthObservation) -> float:
    return float(_camera_point(traj, obs.t, obs.pose)[2] - obs.d)


def event_jacobian(traj: BallisticTrajectory, obs: EventObservation) -> np.ndarray:
    """d r_E / d (p0, v0), shape (2, 6)."""
    Rt = obs.pose.rotation.T
    x, y, z = Rt @ (traj.position(obs.t) - obs.pose.translation)
    dproj = np.array([[1.0 / z, 0.0, -x / z**2], [0.0, 1.0 / z, -y / z**2]])
    dp = dproj @ Rt
    return np.hstack([dp, (obs.t - traj.t0) * dp])


def depth_jacobian(traj: BallisticTrajectory, obs: DepthObservation) -> np.ndarray:
    """d r_D / d (p0, v0), shape (6,)."""
    row = obs.pose.rotation.T[2]
    return np.concatenate([row, (obs.t - traj.t0) * row])


def huber(s: float, delta: float) -> float:
    """Huber loss of a squared norm ``s``."""
    return s if s <= delta * delta else 2.0 * delta * math.sqrt(s) - delta * delta


def _huber_weight(s: float, delta: float) -> float:
    return 1.0 if s <= delta * delta else delta / math.sqrt(s)


class _Problem:
    def __init__(self, events, depths, g, t0, config: SolverConfig):
        self.events = list(events)
        self.depths = list(depths)
        self.g = np.asarray(g, dtype=np.float64)
        self.t0 = float(t0)
        self.config = config
        # stacked quantities for vectorized evaluation
        self.e_t = np.array([o.t for o in self.events]) - self.t0
        self.e_uv = np.array([[o.u, o.v] for o in self.events]).reshape(-1, 2)
        self.e_R = np.array([o.pose.rotation for o in self.events]).reshape(-1, 3, 3)
        self.e_c = np.array([o.pose.translation for o in self.events]).reshape(-1, 3)
        self.d_t = np.array([o.t for o in self.depths]) - self.t0
        self.d_val = np.array([o.d for o in self.depths])
        self.d_R = np.array([o.pose.rotation for o in self.depths]).reshape(-1, 3, 3)
        self.d_c = np.array([o.pose.translation for o in self.depths]).reshape(-1, 3)

    def _positions(self, x, tau):
        return x[:3] + tau[:, None] * x[3:6] + 0.5 * self.g * tau[:, None] ** 2

    def evaluate(self, x, jacobian: bool = True):
        cfg = self.config
        cam = np.einsum("nji,nj->ni", self.e_R, self._positions(x, self.e_t) - self.e_c)
        z = cam[:, 2]
        ok = z > cfg.eps_z
        zs = np.where(ok, z, 1.0)
        r_e = cam[:, :2] / zs[:, None] - self.e_uv
        r_e[~ok] = 0.0
        cam_d = np.einsum("nji,nj->ni", self.d_R, self._positions(x, self.d_t) - self.d_c)
        r_d = cam_d[:, 2] - self.d_val if len(self.depths) else np.zeros(0)
        s_e = np.sum(r_e**2, axis=1)
        cost_e = sum(huber(s, cfg.huber_event) for s, k in zip(s_e, ok) if k)
        cost_d = sum(huber(r * r, cfg.huber_depth) for r in r_d)
        cost = 0.5 * (cfg.weight_event * cost_e + cfg.weight_depth * cost_d)
        out = {"cost": cost, "r_e": r_e, "r_d": r_d, "skipped": int(np.count_nonzero(~ok))}
        if not jacobian:
            return out
        Hm = np.zeros((6, 6))
        gv = np.zeros(6)
        for k in np.flatnonzero(ok):
            xk, yk, zk = cam[k]
            dproj = np.array([[1.0 / zk, 0.0, -xk / zk**2], [0.0, 1.0 / zk, -yk / zk**2]])
            dp = dproj @ self.e_R[k].T
            J = np.hstack([dp, self.e_t[k] * dp])
            w = cfg.weight_event * _huber_weight(s_e[k], cfg.huber_event)
            Hm += w * J.T @ J
            gv += w * J.T @ r_e[k]
        for k in range(len(self.depths)):
            row = self.d_R[k][:, 2]
            J = np.concatenate([row, self.d_t[k] * row])
            w = cfg.weight_depth * _huber_weight(r_d[k] ** 2, cfg.huber_depth)
            Hm += w * np.outer(J, J)
            gv += w * J * r_d[k]
        out["H"] = Hm
        out["g"] = gv
        return out


def initial_guess(events: Sequence[EventObservation], depths: Sequence[DepthObservation], g, t0: float,
                  default_depth: float = 5.0) -> BallisticTrajectory:
    """Back-project the first and last event observations and difference them."""
    g = np.asarray(g, dtype=np.float64)
    first, last = events[0], events[-1]

    def depth_near(t):
        if not depths:
            return default_depth
        return min(depths, key=lambda o: abs(o.t - t)).d

    def backproject(obs, d):
        return obs.pose.rotation @ np.array([obs.u * d, obs.v * d, d]) + obs.pose.translation

    d_first = depths[0].d if depths else default_depth
    p_f = backproject(first, d_first)
    p_l = backproject(last, depth_near(last.t))
    tau_f, tau_l = first.t - t0, last.t - t0
    if tau_l - tau_f > 1e-9:
        v0 = (p_l - p_f) / (tau_l - tau_f) - 0.5 * g * (tau_l + tau_f)
    else:
        v0 = np.zeros(3)
    p0 = p_f - v0 * tau_f - 0.5 * g * tau_f**2
    return BallisticTrajectory(p0, v0, g, t0)


def estimate(
    events: Sequence[EventObservation],
    depths: Sequence[DepthObservation] = (),
    g=GRAVITY,
    t0: Optional[float] = None,
    config: SolverConfig = SolverConfig(),
    initial: Optional[BallisticTrajectory] = None,
) -> EstimateResult:
    events = sorted(events, key=lambda o: o.t)
    depths = sorted(depths, key=lambda o: o.t)
    if len(events) < 3 or 2 * len(events) + len(depths) < 6:
        raise InsufficientObservationsError(
            f"need >= 3 event observations and >= 6 scalar residuals, got {len(events)} events, {len(depths)} depths"
        )
    if t0 is None:
        t0 = min(events[0].t, depths[0].t if depths else math.inf)
    if events[0].t < t0 or (depths and depths[0].t < t0):
        raise ValueError("observation precedes t0")
    problem = _Problem(events, depths, g, t0, config)
    traj = initial.rebased(t0) if initial is not None else initial_guess(events, depths, g, t0, config.default_depth)
    x = traj.params.copy()
    state = problem.evaluate(x)
    lam = config.lambda0
    history = [state["cost"]]
    converged = False
    status = "max_iterations"
    iterations = 0
    while iterations < config.max_iterations:
        if np.max(np.abs(state["g"])) < config.gradient_tol:
            converged, status = True, "gradient_tol"
            break
        Hm, gv = state["H"], state["g"]
        diag = np.diag(Hm).copy()
        diag[diag <= 0] = 1e-12
        accepted = False
        while lam <= config.lambda_max:
            A = Hm + lam * np.diag(diag)
            try:
                step = np.linalg.solve(A, -gv)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(A, -gv, rcond=None)[0]
            trial = problem.evaluate(x + step)
            if trial["cost"] < state["cost"] and trial["skipped"] <= state["skipped"]:
                accepted = True
                break
            lam *= config.lambda_up
        if not accepted:
            status = "stalled" if state["cost"] < 1e-20 else "damping_limit"
            converged = state["cost"] < 1e-20
            break
        iterations += 1
        x = x + step
        state = trial
        history.append(state["cost"])
        lam = max(lam / config.lambda_down, 1e-15)
        if np.linalg.norm(step) < config.step_tol * (1.0 + np.linalg.norm(x)):
            converged, status = True, "step_tol"
            break
    return EstimateResult(
        traj.with_params(x), float(state["cost"]), iterations, converged, status,
        state["r_e"], state["r_d"], state["skipped"], history,
    )


def write_trajectory(path: Union[str, pathlib.Path], result: EstimateResult) -> None:
    tr = result.trajectory
    vals = " ".join(f"{v:.9f}" for v in (*tr.p0, *tr.v0))
    with open(path, "w") as f:
        f.write("# t0 p0x p0y p0z v0x v0y v0z cost iters converged\n")
        f.write(f"# g {tr.g[0]:.6f} {tr.g[1]:.6f} {tr.g[2]:.6f}\n")
        f.write(f"{tr.t0:.9f} {vals} {result.cost:.9e} {result.iterations} {int(result.converged)}\n")


def read_trajectory(path: Union[str, pathlib.Path]) -> tuple[BallisticTrajectory, float, int, bool]:
    g = np.array(GRAVITY)
    row = None
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "#":
                if len(parts) == 5 and parts[1] == "g":
                    g = np.array([float(p) for p in parts[2:5]])
                continue
            row = parts
    if row is None or len(row) != 10:
        raise ValueError(f"{path}: malformed trajectory file")
    vals = [float(p) for p in row[:8]]
    return BallisticTrajectory(vals[1:4], vals[4:7], g, vals[0]), vals[7], int(row[8]), bool(int(row[9]))


def sample_trajectory(traj: BallisticTrajectory, t_start: float, t_end: float, rate: float = 100.0):
    n = int(math.floor((t_end - t_start) * rate + 1e-9)) + 1
    times = t_start + np.arange(n) / rate
    return times, traj.position(times)


def write_trajectory_samples(path, traj: BallisticTrajectory, t_start: float, t_end: float, rate: float = 100.0) -> None:
    times, pos = sample_trajectory(traj, t_start, t_end, rate)
    with open(path, "w") as f:
        f.write("# t,x,y,z\n")
        for t, p in zip(times, pos):
            f.write(f"{t:.6f},{p[0]:.6f},{p[1]:.6f},{p[2]:.6f}\n")
