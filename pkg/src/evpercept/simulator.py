"""Deterministic synthetic scenes: a camera rig flying inside a textured room
while a ball is thrown across the field of view.

Events come from a geometric displacement model: every scene sample point
emits an event each time its projection has moved one pixel since its last
event.  Photometric effects are not modeled; downstream stages only use
``(x, y, t)``.  The ball does not occlude background texture.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import pathlib
import warnings
from typing import Optional, Union

import numba
import numpy as np

from .compensation import ImuData, VelocityData, write_imu_file, write_velocity_file
from .depth import depth_filename, write_depth_frame, write_depth_index
from .events import EventStream, write_event_file
from .geometry import Intrinsics, Pose, PoseTrajectory, compose, write_pose_file
from .trajectory import BallisticTrajectory

logger = logging.getLogger(__name__)

OBJECT, BACKGROUND, NOISE = 0, 1, 2
LABEL_CHARS = "obn"

# camera looking along world +x, image x to world -y, image y to world -z
R_BASE = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


@dataclasses.dataclass
class SceneConfig:
    duration: float = 0.4
    camera_motion: str = "forward"  # hover | forward | swing
    speed: float = 2.0
    swing_amplitude: float = 0.3
    swing_frequency: float = 1.5
    yaw_rate: float = 0.0
    camera_start: tuple = (0.0, 0.0, 0.0)

    ball: bool = True
    ball_p0: tuple = (4.5, 2.2, 0.3)
    ball_v0: tuple = (0.0, -12.0, 1.5)
    ball_t0: float = 0.05
    ball_diameter: float = 0.21
    ball_density: float = 3.0  # sample points per projected pixel area
    gravity: tuple = (0.0, 0.0, -9.81)

    room_x: tuple = (-5.0, 14.0)
    room_y: tuple = (-5.0, 5.0)
    room_z: tuple = (-1.5, 3.5)
    background_density: float = 0.0  # isolated speckle points per image pixel
    edge_count: int = 600  # straight texture edges on the walls
    edge_length: float = 0.4
    edge_spacing: float = 0.5  # sample spacing along an edge, pixels at the seeding depth
    texture_x_max: float = float("inf")  # surfaces beyond this world x are textureless

    width: int = 240
    height: int = 180
    fx: float = 200.0
    fy: float = 200.0
    cx: float = 120.0
    cy: float = 90.0
    depth_width: int = 240
    depth_height: int = 180
    depth_fx: float = 180.0
    depth_fy: float = 180.0
    depth_cx: float = 120.0
    depth_cy: float = 90.0
    depth_baseline: tuple = (0.05, 0.0, 0.0)  # depth camera origin in the event camera frame
    depth_max_range: float = 15.0

    depth_rate: float = 15.0
    imu_rate: float = 1000.0
    pose_rate: float = 1000.0

    pixel_jitter: float = 0.0
    depth_sigma: float = 0.01
    timestamp_jitter: float = 0.0
    noise_rate: float = 2000.0  # spurious events per second over the frame
    gyro_sigma: float = 0.0

    substep: float = 1e-4
    window: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.camera_motion not in ("hover", "forward", "swing"):
            raise ValueError(f"unknown camera motion {self.camera_motion!r}")
        for name in ("depth_rate", "imu_rate", "pose_rate", "duration"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.substep > 1e-4 + 1e-15:
            raise ValueError("substep must be <= 0.1 ms")

    @property
    def event_intrinsics(self) -> Intrinsics:
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)

    @property
    def depth_intrinsics(self) -> Intrinsics:
        return Intrinsics(self.depth_fx, self.depth_fy, self.depth_cx, self.depth_cy, self.depth_width, self.depth_height)

    @property
    def depth_extrinsic(self) -> Pose:
        """``^E T_D``: depth camera frame to event camera frame."""
        return Pose(np.eye(3), self.depth_baseline)


class CameraMotion:
    """Analytic event-camera trajectory for a scene."""

    def __init__(self, cfg: SceneConfig):
        self.cfg = cfg
        self.c0 = np.asarray(cfg.camera_start, dtype=np.float64)

    def position(self, t):
        t = np.asarray(t, dtype=np.float64)
        p = np.broadcast_to(self.c0, t.shape + (3,)).copy()
        if self.cfg.camera_motion in ("forward", "swing"):
            p[..., 0] += self.cfg.speed * t
        if self.cfg.camera_motion == "swing":
            p[..., 1] += self.cfg.swing_amplitude * np.sin(2 * math.pi * self.cfg.swing_frequency * t)
        return p

    def velocity(self, t):
        t = np.asarray(t, dtype=np.float64)
        v = np.zeros(t.shape + (3,))
        if self.cfg.camera_motion in ("forward", "swing"):
            v[..., 0] = self.cfg.speed
        if self.cfg.camera_motion == "swing":
            w = 2 * math.pi * self.cfg.swing_frequency
            v[..., 1] = self.cfg.swing_amplitude * w * np.cos(w * t)
        return v

    def acceleration(self, t):
        t = np.asarray(t, dtype=np.float64)
        a = np.zeros(t.shape + (3,))
        if self.cfg.camera_motion == "swing":
            w = 2 * math.pi * self.cfg.swing_frequency
            a[..., 1] = -self.cfg.swing_amplitude * w * w * np.sin(w * t)
        return a

    def rotation(self, t: float) -> np.ndarray:
        psi = self.cfg.yaw_rate * t
        c, s = math.cos(psi), math.sin(psi)
        Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Rz @ R_BASE

    def angular_velocity(self) -> np.ndarray:
        """Body rate in the camera frame (constant yaw rate about world z)."""
        return R_BASE.T @ np.array([0.0, 0.0, self.cfg.yaw_rate])

    def pose(self, t: float) -> Pose:
        return Pose(self.rotation(t), self.position(t))


@dataclasses.dataclass
class WindowTruth:
    t0: float
    box: Optional[tuple]  # (xmin, ymin, xmax, ymax) in the window-start camera
    object_events: int

    def contains(self, x: float, y: float) -> bool:
        if self.box is None:
            return False
        x0, y0, x1, y1 = self.box
        return x0 <= x <= x1 and y0 <= y <= y1


@dataclasses.dataclass
class GroundTruth:
    trajectory: BallisticTrajectory
    windows: list
    labels: np.ndarray
    sources: np.ndarray  # background point index, ball point index, or -1 for noise


@dataclasses.dataclass
class SceneBundle:
    config: SceneConfig
    events: EventStream
    imu: ImuData
    velocity: VelocityData
    poses: PoseTrajectory
    depth_frames: list  # [(t, depth image in the depth camera)]
    truth: GroundTruth
    background_points: np.ndarray
    motion: CameraMotion

    @property
    def K_E(self) -> Intrinsics:
        return self.config.event_intrinsics

    @property
    def K_D(self) -> Intrinsics:
        return self.config.depth_intrinsics

    def depth_pose(self, t: float) -> Pose:
        return compose(self.motion.pose(t), self.config.depth_extrinsic)


def _room_hit(origins: np.ndarray, dirs: np.ndarray, cfg: SceneConfig, return_axis: bool = False):
    """Ray parameter of the exit point of rays starting inside the room box."""
    lo = np.array([cfg.room_x[0], cfg.room_y[0], cfg.room_z[0]])
    hi = np.array([cfg.room_x[1], cfg.room_y[1], cfg.room_z[1]])
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(dirs > 0, (hi - origins) / dirs, np.inf)
        t_lo = np.where(dirs < 0, (lo - origins) / dirs, np.inf)
    t = np.minimum(t_hi, t_lo)
    if return_axis:
        return t.min(axis=-1), t.argmin(axis=-1)
    return t.min(axis=-1)


def _sphere_hit(origins: np.ndarray, dirs: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    oc = origins - center
    b = np.sum(oc * dirs, axis=-1)
    a = np.sum(dirs * dirs, axis=-1)
    c = np.sum(oc * oc, axis=-1) - radius * radius
    disc = b * b - a * c
    t = np.full(disc.shape, np.inf)
    ok = disc >= 0
    root = (-b[ok] - np.sqrt(disc[ok])) / a[ok]
    t[ok] = np.where(root > 1e-6, root, np.inf)
    return t


def _pixel_rays(K: Intrinsics, u, v) -> np.ndarray:
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u, dtype=np.float64)], axis=-1)


def _surface_samples(cfg: SceneConfig, motion: CameraMotion, rng: np.random.Generator, n: int):
    """Room-surface points seen through random pixels at random scene times.

    Returns the points, the index of the axis normal to the hit wall, and
    the camera depth at which each point was seeded.
    """
    K = cfg.event_intrinsics
    times = rng.uniform(0.0, cfg.duration, n)
    u = rng.uniform(-0.5, cfg.width - 0.5, n)
    v = rng.uniform(-0.5, cfg.height - 0.5, n)
    rays = _pixel_rays(K, u, v)
    origins = motion.position(times)
    base = rays @ R_BASE.T
    psi = cfg.yaw_rate * times
    c, s = np.cos(psi), np.sin(psi)
    dirs = np.stack([c * base[:, 0] - s * base[:, 1], s * base[:, 0] + c * base[:, 1], base[:, 2]], axis=-1)
    hit, axis = _room_hit(origins, dirs, cfg, return_axis=True)
    return origins + hit[:, None] * dirs, axis, hit


def sample_background(cfg: SceneConfig, motion: CameraMotion, rng: np.random.Generator) -> np.ndarray:
    """Static texture: isolated speckle points plus straight edges on the walls.

    Edges are sampled every ``edge_spacing`` pixels at the depth they were
    seeded from, so each edge sweeps a continuous trail when smeared.
    """
    parts = []
    n_speckle = int(round(cfg.background_density * cfg.width * cfg.height))
    if n_speckle:
        parts.append(_surface_samples(cfg, motion, rng, n_speckle)[0])
    if cfg.edge_count:
        centers, axis, depth = _surface_samples(cfg, motion, rng, cfg.edge_count)
        theta = rng.uniform(0.0, math.pi, cfg.edge_count)
        lo = np.array([cfg.room_x[0], cfg.room_y[0], cfg.room_z[0]])
        hi = np.array([cfg.room_x[1], cfg.room_y[1], cfg.room_z[1]])
        for k in range(cfg.edge_count):
            e1, e2 = [i for i in range(3) if i != axis[k]]
            direction = np.zeros(3)
            direction[e1], direction[e2] = math.cos(theta[k]), math.sin(theta[k])
            step = cfg.edge_spacing * depth[k] / cfg.fx
            n_pts = max(2, int(math.ceil(cfg.edge_length / step)) + 1)
            offsets = np.linspace(-cfg.edge_length / 2, cfg.edge_length / 2, n_pts)
            parts.append(np.clip(centers[k] + offsets[:, None] * direction, lo, hi))
    if not parts:
        return np.zeros((0, 3))
    pts = np.concatenate(parts)
    return pts[pts[:, 0] <= cfg.texture_x_max]


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * k / n)
    theta = math.pi * (1 + 5**0.5) * k
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1)


def sphere_silhouette_radius(K: Intrinsics, z: np.ndarray, radius: float) -> np.ndarray:
    """Apparent radius in pixels of a sphere at camera depth ``z``."""
    return K.fx * radius / np.sqrt(np.maximum(z * z - radius * radius, 1e-12))


@numba.njit(cache=True)
def _emit_kernel(points, phase, normals, radius, centers, active, Rs, cs, times, fx, fy, cx, cy, width, height,
                 margin, out_t, out_xy, out_src):
    """One event per pixel of image-plane path length, per sample point.

    Path length starts at the point's random threshold phase and grows over
    sub-steps where the point is visible at both ends; each integer
    crossing emits an event at the interpolated time and position.  Ball points (non-empty ``normals``) ride on
    ``centers`` and are visible only while facing the camera.  Returns the
    number of events, which may exceed the output capacity.
    """
    n_out = 0
    cap = out_t.shape[0]
    moving = normals.shape[0] > 0
    for m in range(points.shape[0]):
        arc = phase[m]
        prev_vis = False
        pu = 0.0
        pv = 0.0
        for s in range(times.shape[0]):
            vis = active[s]
            u = 0.0
            v = 0.0
            if vis:
                px, py, pz = points[m, 0], points[m, 1], points[m, 2]
                if moving:
                    px = centers[s, 0] + radius * normals[m, 0]
                    py = centers[s, 1] + radius * normals[m, 1]
                    pz = centers[s, 2] + radius * normals[m, 2]
                dx, dy, dz = px - cs[s, 0], py - cs[s, 1], pz - cs[s, 2]
                if moving and normals[m, 0] * dx + normals[m, 1] * dy + normals[m, 2] * dz >= 0.0:
                    vis = False
                X = Rs[s, 0, 0] * dx + Rs[s, 1, 0] * dy + Rs[s, 2, 0] * dz
                Y = Rs[s, 0, 1] * dx + Rs[s, 1, 1] * dy + Rs[s, 2, 1] * dz
                Z = Rs[s, 0, 2] * dx + Rs[s, 1, 2] * dy + Rs[s, 2, 2] * dz
                if Z <= 0.05:
                    vis = False
                else:
                    u = fx * X / Z + cx
                    v = fy * Y / Z + cy
                    if u < -margin or u > width + margin or v < -margin or v > height + margin:
                        vis = False
            if vis and prev_vis:
                du = u - pu
                dv = v - pv
                seg = math.sqrt(du * du + dv * dv)
                new_arc = arc + seg
                level = math.floor(arc) + 1.0
                while level <= new_arc:
                    frac = (level - arc) / seg
                    if n_out < cap:
                        out_t[n_out] = times[s - 1] + frac * (times[s] - times[s - 1])
                        out_xy[n_out, 0] = pu + frac * du
                        out_xy[n_out, 1] = pv + frac * dv
                        out_src[n_out] = m
                    n_out += 1
                    level += 1.0
                arc = new_arc
            prev_vis = vis
            pu = u
            pv = v
    return n_out


def _emit(points, phase, normals, radius, centers, active, Rs, cs, times, K: Intrinsics, margin=2.0):
    cap = 1024 + 16 * points.shape[0]
    while True:
        out_t = np.empty(cap)
        out_xy = np.empty((cap, 2))
        out_src = np.empty(cap, dtype=np.int64)
        n = _emit_kernel(points, phase, normals, float(radius), centers, active, Rs, cs, times,
                         K.fx, K.fy, K.cx, K.cy, float(K.width), float(K.height), float(margin),
                         out_t, out_xy, out_src)
        if n <= cap:
            return out_t[:n], out_xy[:n], out_src[:n]
        cap = n



def generate(cfg: SceneConfig) -> SceneBundle:
    rng = np.random.default_rng(cfg.seed)
    motion = CameraMotion(cfg)
    K = cfg.event_intrinsics
    g = np.asarray(cfg.gravity, dtype=np.float64)
    ball_traj = BallisticTrajectory(cfg.ball_p0, cfg.ball_v0, g, cfg.ball_t0)
    radius = cfg.ball_diameter / 2

    bg = sample_background(cfg, motion, rng)
    n_steps = int(math.ceil(cfg.duration / cfg.substep - 1e-9))
    times = np.arange(n_steps + 1) * cfg.substep

    n_ball = 0
    if cfg.ball:
        ts = np.linspace(max(cfg.ball_t0, 0.0), cfg.duration, 50)
        cam = np.einsum("nji,nj->ni", np.array([motion.rotation(t) for t in ts]), ball_traj.position(ts) - motion.position(ts))
        front = cam[:, 2] > radius * 1.5
        if np.any(front):
            r_px = sphere_silhouette_radius(K, cam[front, 2], radius).max()
            n_ball = int(np.clip(2 * cfg.ball_density * math.pi * r_px**2, 400, 6000))
        else:
            n_ball = 400
    normals = fibonacci_sphere(n_ball) if n_ball else np.zeros((0, 3))

    Rs = np.array([motion.rotation(t) for t in times])
    cs = motion.position(times)
    chunks_t, chunks_xy, chunks_src, chunks_lab = [], [], [], []
    always = np.ones(len(times), dtype=bool)
    te, xy, j = _emit(bg, rng.random(len(bg)), np.zeros((0, 3)), 0.0, np.zeros((1, 3)), always, Rs, cs, times, K)
    chunks_t.append(te); chunks_xy.append(xy); chunks_src.append(j)
    chunks_lab.append(np.full(len(j), BACKGROUND, dtype=np.int8))
    if n_ball:
        centers = ball_traj.position(times)
        te, xy, j = _emit(normals, rng.random(n_ball), normals, radius, centers, times >= cfg.ball_t0, Rs, cs, times, K)
        chunks_t.append(te); chunks_xy.append(xy); chunks_src.append(j)
        chunks_lab.append(np.full(len(j), OBJECT, dtype=np.int8))

    if chunks_t:
        ev_t = np.concatenate(chunks_t)
        ev_xy = np.concatenate(chunks_xy)
        ev_src = np.concatenate(chunks_src).astype(np.int64)
        ev_lab = np.concatenate(chunks_lab)
    else:
        ev_t, ev_xy = np.zeros(0), np.zeros((0, 2))
        ev_src, ev_lab = np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int8)

    if cfg.pixel_jitter > 0:
        ev_xy = ev_xy + rng.normal(0.0, cfg.pixel_jitter, ev_xy.shape)
    if cfg.timestamp_jitter > 0:
        ev_t = ev_t + rng.normal(0.0, cfg.timestamp_jitter, ev_t.shape)
    px = np.rint(ev_xy)
    inside = (px[:, 0] >= 0) & (px[:, 0] < K.width) & (px[:, 1] >= 0) & (px[:, 1] < K.height) & (ev_t >= 0) & (ev_t < cfg.duration)
    ev_t, px, ev_src, ev_lab = ev_t[inside], px[inside], ev_src[inside], ev_lab[inside]

    n_noise = int(rng.poisson(cfg.noise_rate * cfg.duration)) if cfg.noise_rate > 0 else 0
    if n_noise:
        ev_t = np.concatenate([ev_t, rng.uniform(0.0, cfg.duration, n_noise)])
        px = np.concatenate([px, np.stack([rng.integers(0, K.width, n_noise), rng.integers(0, K.height, n_noise)], 1)])
        ev_src = np.concatenate([ev_src, np.full(n_noise, -1, dtype=np.int64)])
        ev_lab = np.concatenate([ev_lab, np.full(n_noise, NOISE, dtype=np.int8)])

    # round to the nanosecond so that files reproduce the in-memory stream
    ev_t = np.round(ev_t, 9)
    order = np.lexsort((ev_src, ev_lab, ev_t))
    ev_t, px, ev_src, ev_lab = ev_t[order], px[order].astype(np.int32), ev_src[order], ev_lab[order]
    polarity = np.where(rng.random(len(ev_t)) < 0.5, 1, -1).astype(np.int8)
    events = EventStream(ev_t, px[:, 0], px[:, 1], polarity, K.width, K.height)

    n_obj = int(np.count_nonzero(ev_lab == OBJECT))
    if cfg.ball and n_obj == 0:
        warnings.warn("ball never enters the camera frustum; no object events", RuntimeWarning)

    windows = _window_truth(cfg, motion, ball_traj, events, ev_lab) if cfg.ball else []
    truth = GroundTruth(ball_traj, windows, ev_lab, ev_src)

    imu_t = np.arange(int(math.floor(cfg.duration * cfg.imu_rate)) + 1) / cfg.imu_rate
    gyro = np.tile(motion.angular_velocity(), (len(imu_t), 1))
    if cfg.gyro_sigma > 0:
        gyro = gyro + rng.normal(0.0, cfg.gyro_sigma, gyro.shape)
    acc_w = motion.acceleration(imu_t) - g
    accel = np.array([motion.rotation(t).T @ a for t, a in zip(imu_t, acc_w)])
    imu = ImuData(imu_t, gyro, accel)
    velocity = VelocityData(imu_t, motion.velocity(imu_t))

    pose_t = np.arange(int(math.floor(cfg.duration * cfg.pose_rate)) + 1) / cfg.pose_rate
    poses = PoseTrajectory(pose_t, [motion.pose(t) for t in pose_t])

    depth_frames = []
    depth_t = np.arange(int(math.floor(cfg.duration * cfg.depth_rate - 1e-9)) + 1) / cfg.depth_rate
    for t in depth_t:
        depth_frames.append((float(t), render_depth(cfg, motion, ball_traj, float(t), rng)))

    return SceneBundle(cfg, events, imu, velocity, poses, depth_frames, truth, bg, motion)


def render_depth(cfg: SceneConfig, motion: CameraMotion, ball: BallisticTrajectory, t: float,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Ray-cast the room and ball into the depth camera; 0 beyond range."""
    K = cfg.depth_intrinsics
    pose = compose(motion.pose(t), cfg.depth_extrinsic)
    v, u = np.mgrid[0 : K.height, 0 : K.width]
    rays = _pixel_rays(K, u.astype(np.float64), v.astype(np.float64))
    dirs = rays @ pose.rotation.T
    origins = np.broadcast_to(pose.translation, dirs.shape)
    s = _room_hit(origins, dirs, cfg)
    if cfg.ball and t >= cfg.ball_t0:
        s = np.minimum(s, _sphere_hit(origins, dirs, ball.position(t), cfg.ball_diameter / 2))
    depth = s  # unit z component of the camera-frame ray, so s is the z depth
    if rng is not None and cfg.depth_sigma > 0:
        depth = depth + rng.normal(0.0, cfg.depth_sigma, depth.shape)
    depth = np.round(depth, 3)
    depth[(depth <= 0) | (depth > cfg.depth_max_range) | ~np.isfinite(depth)] = 0.0
    return depth


def _window_truth(cfg, motion, ball_traj, events: EventStream, labels: np.ndarray) -> list:
    K = cfg.event_intrinsics
    radius = cfg.ball_diameter / 2
    n_win = int(math.ceil(cfg.duration / cfg.window - 1e-9))
    edges = np.arange(n_win + 1) * cfg.window
    obj_t = events.t[labels == OBJECT]
    counts = np.histogram(obj_t, bins=edges)[0]
    out = []
    for k in range(n_win):
        t0 = float(edges[k])
        ts = np.linspace(t0, t0 + cfg.window, 11)
        ts = ts[ts >= cfg.ball_t0]
        box = None
        if len(ts):
            R, c = motion.rotation(t0), motion.position(t0)
            cam = (ball_traj.position(ts) - c) @ R
            front = cam[:, 2] > radius * 1.5
            if np.any(front):
                cam = cam[front]
                u = K.fx * cam[:, 0] / cam[:, 2] + K.cx
                v = K.fy * cam[:, 1] / cam[:, 2] + K.cy
                r = sphere_silhouette_radius(K, cam[:, 2], radius) + 1.0
                x0, x1 = float((u - r).min()), float((u + r).max())
                y0, y1 = float((v - r).min()), float((v + r).max())
                if x1 >= -0.5 and x0 <= K.width - 0.5 and y1 >= -0.5 and y0 <= K.height - 0.5:
                    box = (x0, y0, x1, y1)
        out.append(WindowTruth(t0, box, int(counts[k])))
    return out


def sample_observations(cfg: SceneConfig, event_times, depth_times, pixel_sigma: float = 0.0,
                        depth_sigma: float = 0.0, rng: Optional[np.random.Generator] = None):
    """Exact (optionally noisy) ball-center observations for estimator studies.

    Event observations are normalized coordinates of the ball center in the
    event camera; depth observations the center's z in the depth camera.
    """
    from .trajectory import DepthObservation, EventObservation

    rng = rng or np.random.default_rng(cfg.seed)
    motion = CameraMotion(cfg)
    K = cfg.event_intrinsics
    traj = BallisticTrajectory(cfg.ball_p0, cfg.ball_v0, cfg.gravity, cfg.ball_t0)
    events, depths = [], []
    for t in event_times:
        pose = motion.pose(t)
        p = pose.rotation.T @ (traj.position(t) - pose.translation)
        u, v = p[0] / p[2], p[1] / p[2]
        if pixel_sigma > 0:
            u += rng.normal(0.0, pixel_sigma) / K.fx
            v += rng.normal(0.0, pixel_sigma) / K.fy
        events.append(EventObservation(float(t), float(u), float(v), pose))
    for t in depth_times:
        pose = compose(motion.pose(t), cfg.depth_extrinsic)
        z = float((pose.rotation.T @ (traj.position(t) - pose.translation))[2])
        if depth_sigma > 0:
            z += rng.normal(0.0, depth_sigma)
        depths.append(DepthObservation(float(t), z, pose))
    return traj, events, depths


def write_ground_truth(path, truth: GroundTruth) -> None:
    tr = truth.trajectory
    with open(path, "w") as f:
        f.write("# trajectory t0 p0x p0y p0z v0x v0y v0z gx gy gz\n")
        vals = " ".join(f"{v:.9f}" for v in (*tr.p0, *tr.v0, *tr.g))
        f.write(f"trajectory {tr.t0:.9f} {vals}\n")
        f.write("# box t0 xmin ymin xmax ymax object_events\n")
        for w in truth.windows:
            if w.box is None:
                f.write(f"box {w.t0:.9f} nan nan nan nan {w.object_events}\n")
            else:
                b = " ".join(f"{v:.4f}" for v in w.box)
                f.write(f"box {w.t0:.9f} {b} {w.object_events}\n")


def read_ground_truth(path) -> tuple[BallisticTrajectory, list]:
    traj, windows = None, []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "trajectory":
                v = [float(x) for x in parts[1:]]
                traj = BallisticTrajectory(v[1:4], v[4:7], v[7:10], v[0])
            elif parts[0] == "box":
                t0 = float(parts[1])
                coords = [float(x) for x in parts[2:6]]
                box = None if any(math.isnan(c) for c in coords) else tuple(coords)
                windows.append(WindowTruth(t0, box, int(parts[6])))
            else:
                raise ValueError(f"{path}:{lineno}: unknown record {parts[0]!r}")
    if traj is None:
        raise ValueError(f"{path}: no trajectory record")
    return traj, windows


def read_labels(path) -> np.ndarray:
    """Per-event labels, one character per line (o = object, b = background, n = noise)."""
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            c = line.strip()
            if c not in ("o", "b", "n"):
                raise ValueError(f"{path}:{lineno}: unknown label {c!r}")
            out.append(LABEL_CHARS.index(c))
    return np.array(out, dtype=np.int8)


def write_dataset(bundle: SceneBundle, outdir: Union[str, pathlib.Path]) -> pathlib.Path:
    """Write all sensor streams and ground truth in the pipeline's file formats."""
    from . import config as config_mod

    out = pathlib.Path(outdir)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    write_event_file(out / "events.csv", bundle.events)
    with open(out / "labels.txt", "w") as f:
        f.write("".join(LABEL_CHARS[l] + "\n" for l in bundle.truth.labels))
    write_imu_file(out / "imu.csv", bundle.imu)
    write_velocity_file(out / "velocity.csv", bundle.velocity)
    write_pose_file(out / "poses.txt", bundle.poses.times, bundle.poses.poses)
    entries = []
    for t, depth in bundle.depth_frames:
        name = f"depth/{depth_filename(t)}"
        write_depth_frame(out / name, depth)
        entries.append((t, name))
    write_depth_index(out / "depth_index.csv", entries)
    write_ground_truth(out / "ground_truth.txt", bundle.truth)
    config_mod.write_scene_config(out / "scene.cfg", bundle.config)
    config_mod.write_run_config(out / "run.cfg", config_mod.run_config_for_scene(bundle.config, out))
    return out
