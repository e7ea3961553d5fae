import dataclasses
import filecmp
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from evpercept.config import load_scene_config
from evpercept.geometry import Intrinsics
from evpercept.simulator import (BACKGROUND, NOISE, OBJECT, CameraMotion, SceneConfig, _emit, generate,
                                 read_ground_truth, read_labels, render_depth, sample_observations, write_dataset)

K = Intrinsics(200.0, 200.0, 120.0, 90.0, 240, 180)


def static_emit(points, phase, cam_positions, times):
    Rs = np.tile(np.eye(3), (len(times), 1, 1))
    return _emit(points, phase, np.zeros((0, 3)), 0.0, np.zeros((1, 3)), np.ones(len(times), bool), Rs,
                 cam_positions, times, K)


def test_ten_pixel_path_gives_ten_events():
    times = np.linspace(0.0, 0.01, 101)
    cams = np.column_stack([-0.1 * times / 0.01, np.zeros(101), np.zeros(101)])  # point moves +10 px in u
    t, xy, src = static_emit(np.array([[0.0, 0.0, 2.0]]), np.array([0.3]), cams, times)
    assert len(t) == 10
    np.testing.assert_allclose(xy[:, 0] - 120.0, np.arange(1, 11) - 0.3, atol=1e-9)
    np.testing.assert_allclose(t, (np.arange(1, 11) - 0.3) / 10 * 0.01, atol=1e-12)
    np.testing.assert_array_equal(src, 0)


def test_event_count_tracks_arc_length():
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(-1, 1, 300), rng.uniform(-0.8, 0.8, 300), rng.uniform(2, 6, 300)])
    times = np.arange(0, 0.1 + 1e-12, 1e-4)
    w = 2 * math.pi * 4
    cams = np.column_stack([0.1 * np.sin(w * times), 0.05 * np.cos(w * times) - 0.05, 0.5 * times])
    t, _, src = static_emit(pts, rng.random(300), cams, times)
    rel = pts[None, :, :] - cams[:, None, :]
    u, v = K.fx * rel[..., 0] / rel[..., 2], K.fy * rel[..., 1] / rel[..., 2]
    arc = np.hypot(np.diff(u, axis=0), np.diff(v, axis=0)).sum()
    assert abs(len(t) - arc) < 0.1 * arc


def test_static_scene_without_ball_is_silent():
    b = generate(SceneConfig(camera_motion="hover", ball=False, noise_rate=0.0, duration=0.1))
    assert len(b.events) == 0


def test_noise_count_is_poisson():
    cfg = SceneConfig(camera_motion="hover", ball=False, noise_rate=20000.0, duration=0.1)
    b = generate(cfg)
    lam = cfg.noise_rate * cfg.duration
    n = int((b.truth.labels == NOISE).sum())
    assert abs(n - lam) < 5 * math.sqrt(lam)
    assert np.all(b.truth.sources[b.truth.labels == NOISE] == -1)


@pytest.fixture(scope="module")
def default_bundle():
    return generate(SceneConfig())


def test_events_sorted_and_in_frame(default_bundle):
    ev = default_bundle.events
    assert np.all(np.diff(ev.t) >= 0)
    assert ev.x.min() >= 0 and ev.x.max() < 240 and ev.y.min() >= 0 and ev.y.max() < 180
    assert set(np.unique(default_bundle.truth.labels)) == {OBJECT, BACKGROUND, NOISE}


def test_object_events_inside_projected_disc(default_bundle):
    b = default_bundle
    cfg, lab = b.config, b.truth.labels
    r = cfg.ball_diameter / 2
    sel = np.flatnonzero(lab == OBJECT)[::25]
    for i in sel:
        t = b.events.t[i]
        pose = b.motion.pose(t)
        c = pose.rotation.T @ (b.truth.trajectory.position(t) - pose.translation)
        u, v = K.fx * c[0] / c[2] + K.cx, K.fy * c[1] / c[2] + K.cy
        radius = K.fx * r / math.sqrt(c[2] ** 2 - r**2)
        assert math.hypot(b.events.x[i] - u, b.events.y[i] - v) <= radius + 1.5


def test_background_events_follow_source_points(default_bundle):
    b = default_bundle
    sel = np.flatnonzero(b.truth.labels == BACKGROUND)[::97]
    for i in sel:
        t = b.events.t[i]
        pose = b.motion.pose(t)
        p = pose.rotation.T @ (b.background_points[b.truth.sources[i]] - pose.translation)
        u, v = K.fx * p[0] / p[2] + K.cx, K.fy * p[1] / p[2] + K.cy
        assert math.hypot(b.events.x[i] - u, b.events.y[i] - v) <= 0.75


def test_default_scene_coverage(default_bundle):
    b = default_bundle
    with_ball = [w for w in b.truth.windows if w.object_events > 0]
    assert len(with_ball) >= 6
    t_obj = b.events.t[b.truth.labels == OBJECT]
    assert t_obj.max() - t_obj.min() >= 0.15


def test_ball_depth_is_surface_depth():
    cfg = dataclasses.replace(SceneConfig(), depth_sigma=0.0)
    motion = CameraMotion(cfg)
    ball = sample_observations(cfg, [], [])[0]
    t = 0.2
    depth = render_depth(cfg, motion, ball, t)
    Kd = cfg.depth_intrinsics
    from evpercept.geometry import compose
    pose = compose(motion.pose(t), cfg.depth_extrinsic)
    c = pose.rotation.T @ (ball.position(t) - pose.translation)
    u0, v0 = int(round(Kd.fx * c[0] / c[2] + Kd.cx)), int(round(Kd.fy * c[1] / c[2] + Kd.cy))
    r = cfg.ball_diameter / 2
    for du, dv in [(0, 0), (1, 0), (0, -1), (-1, 1)]:
        u, v = u0 + du, v0 + dv
        ray = np.array([(u - Kd.cx) / Kd.fx, (v - Kd.cy) / Kd.fy, 1.0])
        s = brentq(lambda s: np.linalg.norm(s * ray - c) - r, 0.0, ray @ c / (ray @ ray))
        assert depth[v, u] == pytest.approx(s, abs=1e-3)


def test_observations_are_exact_projections():
    cfg = SceneConfig()
    traj, events, depths = sample_observations(cfg, [0.1, 0.2], [0.15])
    for o in events:
        p = np.linalg.inv(o.pose.matrix) @ np.append(traj.position(o.t), 1.0)
        assert (o.u, o.v) == pytest.approx((p[0] / p[2], p[1] / p[2]))
    assert depths[0].pose.translation == pytest.approx(CameraMotion(cfg).position(0.15) + [0, -0.05, 0])


@pytest.mark.slow
def test_dataset_files_are_deterministic(tmp_path):
    cfg = SceneConfig(duration=0.2)
    a = write_dataset(generate(cfg), tmp_path / "a")
    b = write_dataset(generate(cfg), tmp_path / "b")
    names = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert names and names == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for n in names:
        if n.name == "run.cfg":
            continue  # records its own directory
        assert filecmp.cmp(a / n, b / n, shallow=False), n
    traj, windows = read_ground_truth(a / "ground_truth.txt")
    np.testing.assert_allclose(traj.params, [*cfg.ball_p0, *cfg.ball_v0], atol=1e-9)
    assert traj.t0 == cfg.ball_t0 and len(windows) == 8
    bundle = generate(cfg)
    np.testing.assert_array_equal(read_labels(a / "labels.txt"), bundle.truth.labels)
    assert load_scene_config(a / "scene.cfg") == cfg


def test_seed_changes_stream():
    a = generate(SceneConfig(duration=0.05, ball=False, seed=1))
    b = generate(SceneConfig(duration=0.05, ball=False, seed=2))
    assert len(a.events) != len(b.events) or not np.array_equal(a.events.t, b.events.t)
