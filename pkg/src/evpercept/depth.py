"""Depth registration into the event camera and histogram segmentation."""

from __future__ import annotations

import dataclasses
import math
import pathlib
from typing import Union

import numpy as np
from scipy import ndimage

from .detection import DetectionROI
from .geometry import Intrinsics, Pose, compose, inverse
from .time_image import read_pgm16, write_pgm16


@dataclasses.dataclass(frozen=True)
class DepthConfig:
    bin_width: float = 0.10
    min_peak_count: int = 20
    variance_gate: float = 0.05
    pixel_floor: int = 20
    roi_scale: float = 2.0
    min_roi_side: float = 16.0  # px, floor for the scaled ROI sides
    max_range: float = 15.0


@dataclasses.dataclass(frozen=True)
class DepthFrame:
    """Depth in meters (0 = invalid) with the depth camera pose ``^W T_D``."""

    t: float
    depth: np.ndarray
    K: Intrinsics
    pose: Pose


@dataclasses.dataclass(frozen=True)
class DepthMeasurement:
    t: float
    d: float
    variance: float
    pixel_count: int
    accepted: bool


def register_depth(frame: DepthFrame, K_E: Intrinsics, pose_E: Pose) -> np.ndarray:
    """Forward-map valid depth pixels into the event camera; nearest wins."""
    depth = np.asarray(frame.depth, dtype=np.float64)
    vs, us = np.nonzero(depth > 0)
    d = depth[vs, us]
    K_D = frame.K
    pts = np.empty((len(d), 3))
    pts[:, 0] = (us - K_D.cx) / K_D.fx * d
    pts[:, 1] = (vs - K_D.cy) / K_D.fy * d
    pts[:, 2] = d
    T_ED = compose(inverse(pose_E), frame.pose)
    p_e = pts @ T_ED.rotation.T + T_ED.translation
    out = np.full((K_E.height, K_E.width), np.inf)
    front = p_e[:, 2] > 0
    p_e = p_e[front]
    z = p_e[:, 2]
    u = np.rint(K_E.fx * p_e[:, 0] / z + K_E.cx).astype(np.int64)
    v = np.rint(K_E.fy * p_e[:, 1] / z + K_E.cy).astype(np.int64)
    inside = (u >= 0) & (u < K_E.width) & (v >= 0) & (v < K_E.height)
    np.minimum.at(out, (v[inside], u[inside]), z[inside])
    out[np.isinf(out)] = 0.0
    return out


def fill_holes(depth: np.ndarray, max_distance: float = 2.0) -> np.ndarray:
    """Copy the nearest valid depth into holes at most ``max_distance`` px away."""
    depth = np.asarray(depth, dtype=np.float64)
    holes = depth <= 0
    if not np.any(holes) or np.all(holes):
        return depth.copy()
    dist, (iy, ix) = ndimage.distance_transform_edt(holes, return_indices=True)
    out = depth[iy, ix]
    out[dist > max_distance] = 0.0
    return out


def scale_roi(roi: DetectionROI, factor: float, width: int, height: int, min_side: float = 0.0) -> DetectionROI:
    """Scale the sides about the center, then clip the box to the frame."""
    if factor <= 0:
        raise ValueError("scale factor must be positive")
    w, h = max(roi.w * factor, min_side), max(roi.h * factor, min_side)
    x0 = max(-0.5, roi.cx - w / 2)
    x1 = min(width - 0.5, roi.cx + w / 2)
    y0 = max(-0.5, roi.cy - h / 2)
    y1 = min(height - 0.5, roi.cy + h / 2)
    return dataclasses.replace(roi, cx=(x0 + x1) / 2, cy=(y0 + y1) / 2, w=x1 - x0, h=y1 - y0)


def segment_depth(depth: np.ndarray, roi: DetectionROI, t: float = 0.0, config: DepthConfig = DepthConfig()) -> DepthMeasurement:
    """Depth of the nearest histogram peak inside the ROI.

    Pixels of the contiguous band of bins holding at least half the peak
    count are averaged; the measurement is accepted when their variance and
    count pass the gates.
    """
    depth = np.asarray(depth, dtype=np.float64)
    vals = depth[roi.pixel_mask(depth.shape)]
    vals = vals[(vals > 0) & (vals <= config.max_range)]
    if len(vals) == 0:
        return DepthMeasurement(t, 0.0, math.inf, 0, False)
    b = config.bin_width
    lo = math.floor(vals.min() / b) * b
    n_bins = max(1, int(math.floor((vals.max() - lo) / b)) + 1)
    idx = np.minimum(((vals - lo) / b).astype(np.int64), n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    padded = np.concatenate([[-1], counts, [-1]])
    is_peak = (counts >= padded[:-2]) & (counts >= padded[2:]) & (counts >= config.min_peak_count)
    peaks = np.flatnonzero(is_peak)
    if len(peaks) == 0:
        return DepthMeasurement(t, float(vals.mean()), float(vals.var()), 0, False)
    p = int(peaks[0])
    half = 0.5 * counts[p]
    left = p
    while left > 0 and counts[left - 1] >= half:
        left -= 1
    right = p
    while right < n_bins - 1 and counts[right + 1] >= half:
        right += 1
    seg = vals[(idx >= left) & (idx <= right)]
    mean, var = float(seg.mean()), float(seg.var())
    accepted = var <= config.variance_gate and len(seg) >= config.pixel_floor
    return DepthMeasurement(t, mean, var, int(len(seg)), accepted)


def depth_filename(t: float) -> str:
    return f"depth_{int(round(t * 1e6)):d}.pgm"


def write_depth_frame(path: Union[str, pathlib.Path], depth: np.ndarray) -> None:
    """Millimeter 16-bit PGM, 0 = invalid."""
    mm = np.rint(np.nan_to_num(depth, nan=0.0) * 1000.0)
    mm[(mm < 0) | (mm > 65535)] = 0
    write_pgm16(path, mm)


def read_depth_frame(path: Union[str, pathlib.Path]) -> np.ndarray:
    return read_pgm16(path).astype(np.float64) / 1000.0


def read_depth_index(path: Union[str, pathlib.Path]) -> list[tuple[float, pathlib.Path]]:
    path = pathlib.Path(path)
    out = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                t, name = line.split(",")
                out.append((float(t), path.parent / name.strip()))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: expected 't,filename'") from None
    return out


def write_depth_index(path: Union[str, pathlib.Path], entries: list[tuple[float, str]]) -> None:
    with open(path, "w") as f:
        f.write("# t,filename\n")
        for t, name in entries:
            f.write(f"{t:.9f},{name}\n")
