"""End-to-end runner: window, compensate, detect, track, segment depth, estimate."""

from __future__ import annotations

import dataclasses
import logging
import math
import pathlib
import time
from typing import Callable, Optional

import numpy as np

from . import compensation as comp
from .config import RunConfig
from .depth import (DepthFrame, fill_holes, read_depth_frame, read_depth_index, register_depth,
                    scale_roi, segment_depth)
from .detection import DetectionROI, detect, roi_time, write_detection_log
from .events import EventBuffer, EventStream, group_by_pixel, read_event_file, window_stream
from .geometry import Intrinsics, Pose, PoseTrajectory, compose, read_pose_file
from .metrics import MetricError, MetricsReport, ape, box_mask, relative_contrast
from .time_image import EmptyImageError, build_mean_time_image, dump_normalized, normalize
from .tracking import Association, Tracker, write_track_log
from .trajectory import (DepthObservation, EstimateResult, EventObservation, InsufficientObservationsError, estimate,
                         write_trajectory, write_trajectory_samples)

logger = logging.getLogger(__name__)

GT_RATE = 1000.0  # ground-truth sampling for APE
MIN_OBJECT_EVENTS = 50  # windows scored for detection rate and contrast


class DatasetError(ValueError):
    pass


class PipelineError(RuntimeError):
    pass


@dataclasses.dataclass
class Dataset:
    events: EventStream
    poses: PoseTrajectory
    imu: Optional[comp.ImuData] = None
    velocity: Optional[comp.VelocityData] = None
    depth_frames: list = dataclasses.field(default_factory=list)  # [(t, array or path)]
    truth_trajectory: object = None
    truth_windows: Optional[list] = None
    labels: Optional[np.ndarray] = None  # per-event object/background/noise labels

    def depth_image(self, index: int) -> np.ndarray:
        t, src = self.depth_frames[index]
        if isinstance(src, np.ndarray):
            return src
        img = read_depth_frame(src)
        self.depth_frames[index] = (t, img)
        return img

    @classmethod
    def from_bundle(cls, bundle) -> "Dataset":
        return cls(bundle.events, bundle.poses, bundle.imu, bundle.velocity, list(bundle.depth_frames),
                   bundle.truth.trajectory, bundle.truth.windows, bundle.truth.labels)


def load_dataset(cfg: RunConfig) -> Dataset:
    from .compensation import read_imu_file, read_velocity_file
    from .simulator import read_ground_truth, read_labels

    def load(name, reader, required):
        path = cfg.path(name)
        if path is None:
            if required:
                raise DatasetError(f"dataset file {name} not configured")
            return None
        try:
            return reader(path)
        except FileNotFoundError:
            raise DatasetError(f"{path}: file not found") from None
        except (ValueError, KeyError, IndexError) as exc:
            msg = str(exc)
            raise DatasetError(msg if str(path) in msg else f"{path}: {msg}") from None

    events = load("events", read_event_file, True)
    poses = load("poses", read_pose_file, True)
    imu = load("imu", read_imu_file, False)
    velocity = load("velocity", read_velocity_file, False)
    depth_frames = load("depth_index", read_depth_index, False) or []
    truth = load("ground_truth", read_ground_truth, False)
    labels = load("labels", read_labels, False)
    if labels is not None and len(labels) != len(events):
        raise DatasetError(f"{cfg.path('labels')}: {len(labels)} labels for {len(events)} events")
    for t, p in depth_frames:
        if not pathlib.Path(p).exists():
            raise DatasetError(f"{p}: depth frame listed in the index does not exist")
    if imu is not None:
        imu = imu.rotated(cfg.extrinsics.imu_rotation())
    traj, windows = truth if truth is not None else (None, None)
    return Dataset(events, poses, imu, velocity, list(depth_frames), traj, windows, labels)


@dataclasses.dataclass
class WindowRecord:
    t0: float
    n_events: int
    omega: np.ndarray
    velocity: np.ndarray
    roi: Optional[DetectionROI] = None
    t_detect: Optional[float] = None
    association: Optional[str] = None
    track_id: int = -1
    contrast: Optional[float] = None
    N: Optional[np.ndarray] = None


@dataclasses.dataclass
class RunResult:
    report: MetricsReport
    windows: list
    estimate: Optional[EstimateResult]
    event_obs: dict  # track id -> [EventObservation]
    depth_obs: dict  # track id -> [DepthObservation]
    depth_log: list  # [(track id, DepthMeasurement)]
    track_states: list
    estimates: list  # [(t, EstimateResult)]
    estimate_track: int = -1
    truth: object = None  # true BallisticTrajectory when the dataset has one


class _DepthRegistry:
    """Registered depth frames in the event camera, cached per target pose time."""

    def __init__(self, dataset: Dataset, cfg: RunConfig):
        self.dataset = dataset
        self.K_D = cfg.depth_camera.intrinsics()
        self.K_E = cfg.camera.intrinsics()
        self.T_ED = cfg.extrinsics.depth_pose()
        self.times = np.array([t for t, _ in dataset.depth_frames])
        self._cache = {}

    def register(self, index: int, t_target: float) -> np.ndarray:
        key = (index, t_target)
        if key not in self._cache:
            t = self.times[index]
            frame = DepthFrame(t, self.dataset.depth_image(index), self.K_D,
                               compose(self.dataset.poses.at(t), self.T_ED))
            self._cache = {key: register_depth(frame, self.K_E, self.dataset.poses.at(t_target))}
        return self._cache[key]

    def latest(self, t: float) -> Optional[int]:
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return i if i >= 0 else None


def _observation_pose(mode: comp.Mode, poses: PoseTrajectory, t0: float, t: float) -> Pose:
    if mode is comp.Mode.ROTATION_TRANSLATION:
        return poses.at(t0)
    if mode is comp.Mode.ROTATION:
        return Pose(poses.at(t0).rotation, poses.at(t).translation)
    return poses.at(t)


def process(dataset: Dataset, cfg: RunConfig, keep_images: bool = False,
            clock: Callable[[], float] = time.perf_counter) -> RunResult:
    """Run every stage over the dataset in memory."""
    K = cfg.camera.intrinsics()
    mode = cfg.mode
    if mode is not comp.Mode.NONE and dataset.imu is None:
        raise PipelineError(f"compensation mode {mode.value!r} needs IMU data and none is configured")
    pipe = cfg.pipeline
    report = MetricsReport()
    events = dataset.events
    dt = pipe.window
    t_start = None if math.isnan(pipe.t_start) else pipe.t_start
    t_end = None if math.isnan(pipe.t_end) else pipe.t_end
    if t_start is None and dataset.truth_windows:
        t_start = dataset.truth_windows[0].t0
    if len(events) or t_start is not None:
        if t_end is not None:
            sel = events.t < t_end
            events = events.slice(0, int(np.count_nonzero(sel)))
        if t_start is not None:
            a = int(np.searchsorted(events.t, t_start, side="left"))
            events = events.slice(a, len(events))
        buffers = window_stream(events, dt, t_start=t_start) if len(events) else []
    else:
        buffers = []
    truth_by_t0 = {}
    if dataset.truth_windows:
        truth_by_t0 = {round(w.t0 / dt): w for w in dataset.truth_windows}

    depth_reg = _DepthRegistry(dataset, cfg)
    tracker = Tracker(cfg.tracking)
    records, track_states = [], []
    event_obs, depth_obs, depth_log = {}, {}, []
    estimates = []
    last_roi: Optional[DetectionROI] = None
    next_depth = 0
    warm = {}

    def fail(t0, stage, exc):
        report.failures.append((t0, stage, str(exc)))
        logger.warning("window %.6f: %s failed: %s", t0, stage, exc)

    def consume_depth(until: float):
        nonlocal next_depth
        while next_depth < len(depth_reg.times) and depth_reg.times[next_depth] < until:
            i = next_depth
            next_depth += 1
            t_i = float(depth_reg.times[i])
            if tracker.track is None or last_roi is None or t_i < tracker.track.last_update - dt:
                continue
            try:
                center = tracker.predicted_position(t_i)
                roi = scale_roi(dataclasses.replace(last_roi, cx=float(center[0]), cy=float(center[1])),
                                cfg.depth.roi_scale, K.width, K.height, cfg.depth.min_roi_side)
                depth_E = depth_reg.register(i, t_i)
                m = segment_depth(depth_E, roi, t_i, cfg.depth)
            except Exception as exc:  # noqa: BLE001 - stage failures are reported and skipped
                fail(t_i, "depth_segmentation", exc)
                continue
            depth_log.append((tracker.track_id, m))
            if m.accepted:
                report.depth_measurements += 1
                depth_obs.setdefault(tracker.track_id, []).append(
                    DepthObservation(t_i, m.d, dataset.poses.at(t_i)))

    for buf in buffers:
        t0 = buf.t0
        rec = WindowRecord(t0, len(buf), np.zeros(3), np.zeros(3))
        records.append(rec)
        report.windows += 1
        consume_depth(t0)
        try:
            omega, v = _ego_motion(dataset, mode, t0, t0 + dt)
            rec.omega, rec.velocity = omega, v
            depth_img = None
            if mode is comp.Mode.ROTATION_TRANSLATION:
                idx = depth_reg.latest(t0 + dt)
                if idx is not None and t0 - depth_reg.times[idx] <= pipe.depth_max_age:
                    depth_img = fill_holes(depth_reg.register(idx, t0))
            pose_t0 = dataset.poses.at(t0)
            started = clock()
            warped = comp.compensate(buf, mode, K, omega, v, pose_t0, depth_img)
            report.compensation_ms.append((clock() - started) * 1e3)
        except Exception as exc:  # noqa: BLE001
            fail(t0, "compensation", exc)
            continue
        if len(buf) < pipe.min_events:
            continue
        try:
            groups = group_by_pixel(warped.x, warped.y, warped.t, K.width, K.height, valid=warped.valid)
            T = build_mean_time_image(groups, reference=t0)
            N = normalize(T)
        except EmptyImageError:
            continue
        except Exception as exc:  # noqa: BLE001
            fail(t0, "time_image", exc)
            continue
        if keep_images:
            rec.N = N.values
        if pipe.dump_images:
            images = cfg.output_dir / "images"
            images.mkdir(parents=True, exist_ok=True)
            dump_normalized(images / f"mean_time_{int(round(t0 * 1e6)):d}.pgm", N, t0, dt)
        box = _contrast_box(dataset, truth_by_t0.get(round(t0 / dt)), buf, warped, K)
        if box is not None:
            try:
                rec.contrast = relative_contrast(N.values, box_mask(N.shape, box))
                report.contrast.append((t0, rec.contrast))
            except MetricError as exc:
                fail(t0, "contrast", exc)
        try:
            roi, F = detect(N, omega, v, cfg.threshold, cfg.detection)
        except Exception as exc:  # noqa: BLE001
            fail(t0, "detection", exc)
            continue
        if roi is None:
            continue
        t_k = roi_time(roi, T.values, T.valid, F)
        if t_k is None:
            continue
        rec.roi, rec.t_detect = roi, t_k
        report.detections += 1
        try:
            decision = tracker.step(roi.center, t_k)
        except Exception as exc:  # noqa: BLE001
            fail(t0, "tracking", exc)
            continue
        rec.association, rec.track_id = decision.value, tracker.track_id
        if decision is Association.REJECT:
            continue
        last_roi = roi
        track_states.append(tracker.track)
        u, w = K.normalize(roi.cx, roi.cy)
        obs = EventObservation(t_k, float(u), float(w), _observation_pose(mode, dataset.poses, t0, t_k))
        event_obs.setdefault(tracker.track_id, []).append(obs)
        result = _try_estimate(event_obs, depth_obs, tracker.track_id, cfg, warm)
        if result is not None:
            estimates.append((t_k, result))
    consume_depth(math.inf)

    final, final_track = None, -1
    if event_obs:
        final_track = max(event_obs, key=lambda k: (len(event_obs[k]), k))
        final = _try_estimate(event_obs, depth_obs, final_track, cfg, warm)
        if final is None:
            fail(records[-1].t0 if records else 0.0, "estimation", "not enough observations on the longest track")

    if dataset.truth_windows is not None:
        scored = [r for r in records
                  if (w := truth_by_t0.get(round(r.t0 / dt))) is not None and w.box is not None
                  and w.object_events >= MIN_OBJECT_EVENTS]
        if scored:
            hits = sum(1 for r in scored if r.roi is not None
                       and truth_by_t0[round(r.t0 / dt)].contains(r.roi.cx, r.roi.cy))
            report.detection_rate = hits / len(scored)
    if final is not None and dataset.truth_trajectory is not None:
        obs = event_obs[final_track] + depth_obs.get(final_track, [])
        t_lo, t_hi = min(o.t for o in obs), max(o.t for o in obs)
        gt_t = np.arange(math.ceil(t_lo * GT_RATE - 1e-9), math.floor(t_hi * GT_RATE + 1e-9) + 1) / GT_RATE
        try:
            report.ape = ape(final.trajectory.position, gt_t, dataset.truth_trajectory.position(gt_t), t_lo, t_hi)
        except MetricError as exc:
            fail(t_hi, "ape", exc)
    return RunResult(report, records, final, event_obs, depth_obs, depth_log, track_states, estimates, final_track,
                     dataset.truth_trajectory)


def _contrast_box(dataset: Dataset, truth, buf: EventBuffer, warped, K: Intrinsics):
    """Object box as it appears in this compensated image.

    Scored only while the true object box lies inside the frame.  With
    per-event labels the box bounds the compensated object events (dilated
    by one pixel); otherwise the true window box is used.
    """
    if truth is None or truth.box is None or truth.object_events < MIN_OBJECT_EVENTS:
        return None
    x0, y0, x1, y1 = truth.box
    if x0 < -0.5 or y0 < -0.5 or x1 > K.width - 0.5 or y1 > K.height - 0.5:
        return None
    if dataset.labels is None:
        return truth.box
    a = int(np.searchsorted(dataset.events.t, buf.t0, side="left"))
    obj = (dataset.labels[a : a + len(buf)] == 0) & warped.in_frame(K.width, K.height)
    if np.count_nonzero(obj) < MIN_OBJECT_EVENTS:
        return None
    xs, ys = np.rint(warped.x[obj]), np.rint(warped.y[obj])
    return float(xs.min() - 1), float(ys.min() - 1), float(xs.max() + 1), float(ys.max() + 1)


def _ego_motion(dataset: Dataset, mode: comp.Mode, t0: float, t1: float):
    """Mean camera-frame angular velocity and world-frame linear velocity."""
    if mode is comp.Mode.NONE:
        return np.zeros(3), np.zeros(3)
    if dataset.imu is None:
        raise comp.MissingImuError("no IMU data loaded")
    samples = dataset.imu.window(t0, t1)
    if len(samples) == 0:
        raise comp.MissingImuError(f"no IMU sample in [{t0:.6f}, {t1:.6f}]")
    omega = comp.average_angular_velocity(samples)
    if dataset.velocity is not None:
        v = dataset.velocity.mean(t0, t1)
    else:
        v = dataset.poses.velocity(t0, t1)
    return omega, v


def _try_estimate(event_obs, depth_obs, track_id, cfg: RunConfig, warm: dict) -> Optional[EstimateResult]:
    events = event_obs.get(track_id, [])
    depths = depth_obs.get(track_id, []) if cfg.pipeline.estimator == "fusion" else []
    if len(events) < 3:
        return None
    try:
        result = estimate(events, depths, t0=None, config=cfg.solver, initial=warm.get(track_id))
    except InsufficientObservationsError:
        return None
    except Exception as exc:  # noqa: BLE001
        logger.warning("estimation failed: %s", exc)
        return None
    warm[track_id] = result.trajectory
    return result


def write_outputs(result: RunResult, cfg: RunConfig) -> pathlib.Path:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_detection_log(out / "detections.csv", [(r.t0, r.roi) for r in result.windows if r.roi is not None])
    write_track_log(out / "tracks.csv", result.track_states)
    with open(out / "observations.csv", "w") as f:
        f.write("# kind,track,t,u_or_d,v\n")
        for tid in sorted(result.event_obs):
            for o in result.event_obs[tid]:
                f.write(f"event,{tid},{o.t:.9f},{o.u:.9f},{o.v:.9f}\n")
        for tid in sorted(result.depth_obs):
            for o in result.depth_obs[tid]:
                f.write(f"depth,{tid},{o.t:.9f},{o.d:.6f},\n")
    with open(out / "depth_segmentation.csv", "w") as f:
        f.write("# track,t,d,variance,pixel_count,accepted\n")
        for tid, m in result.depth_log:
            f.write(f"{tid},{m.t:.9f},{m.d:.6f},{m.variance:.6g},{m.pixel_count},{int(m.accepted)}\n")
    with open(out / "windows.csv", "w") as f:
        f.write("# t0,events,wx,wy,wz,vx,vy,vz,detected,t_detect,association,track\n")
        for r in result.windows:
            td = f"{r.t_detect:.9f}" if r.t_detect is not None else ""
            w, v = r.omega, r.velocity
            f.write(f"{r.t0:.9f},{r.n_events},{w[0]:.6f},{w[1]:.6f},{w[2]:.6f},{v[0]:.6f},{v[1]:.6f},{v[2]:.6f},"
                    f"{int(r.roi is not None)},{td},{r.association or ''},{r.track_id}\n")
    with open(out / "estimates.csv", "w") as f:
        f.write("# t,p0x,p0y,p0z,v0x,v0y,v0z,t0,cost,iterations\n")
        for t, res in result.estimates:
            tr = res.trajectory
            vals = ",".join(f"{x:.9f}" for x in (*tr.p0, *tr.v0))
            f.write(f"{t:.9f},{vals},{tr.t0:.9f},{res.cost:.9e},{res.iterations}\n")
    traj_path = out / "trajectory.txt"
    samples_path = out / "trajectory_samples.csv"
    truth_path = out / "truth_samples.csv"
    for p in (traj_path, samples_path, truth_path):
        if p.exists():
            p.unlink()
    if result.estimate is not None:
        write_trajectory(traj_path, result.estimate)
        obs = result.event_obs[result.estimate_track] + result.depth_obs.get(result.estimate_track, [])
        t_lo, t_hi = result.estimate.trajectory.t0, max(o.t for o in obs)
        write_trajectory_samples(samples_path, result.estimate.trajectory, t_lo, t_hi)
        if result.truth is not None:
            write_trajectory_samples(truth_path, result.truth, t_lo, t_hi)
    result.report.write(out)
    return out


def run(cfg: RunConfig, dataset: Optional[Dataset] = None, figures: Optional[bool] = None) -> RunResult:
    """Load the dataset (unless given), process it and write every artifact."""
    if dataset is None:
        dataset = load_dataset(cfg)
    try:
        result = process(dataset, cfg, keep_images=True)
    except (DatasetError, PipelineError):
        raise
    except Exception as exc:
        raise PipelineError(f"pipeline failed: {exc}") from exc
    out = write_outputs(result, cfg)
    if cfg.pipeline.figures if figures is None else figures:
        from .plotting import render_run_figures

        render_run_figures(result, dataset, cfg, out / "figures")
    return result
