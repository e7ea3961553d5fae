"""Moving-object segmentation on the normalized mean-time image.

Stages: adaptive threshold, noise pre-filter, iterative Gaussian ROI fit
and a connected-component fallback for fits that fail or run away.
"""

from __future__ import annotations

import dataclasses
import math
import pathlib
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage, optimize, special

from .time_image import NormalizedMeanTimeImage


@dataclasses.dataclass(frozen=True)
class ThresholdParams:
    a: float = 0.04  # s/rad
    b: float = 0.01  # s/m
    c: float = 0.2  # calibrated on the simulated default and 5 m/s scenes


@dataclasses.dataclass(frozen=True)
class DetectionConfig:
    k_max: int = 10
    delta_c: float = 2.0
    delta_l: float = 2.0
    min_side: float = 3.0
    runaway_fraction: float = 0.25
    min_mass: float = 0.0
    kernel: int = 3


@dataclasses.dataclass(frozen=True)
class SegmentedImage:
    values: np.ndarray
    theta: float


@dataclasses.dataclass(frozen=True)
class DetectionROI:
    cx: float
    cy: float
    w: float
    h: float
    converged: bool
    mass: float
    iterations: int = 0
    retrieved: bool = False

    @property
    def center(self) -> tuple[float, float]:
        return self.cx, self.cy

    @property
    def area(self) -> float:
        return self.w * self.h

    def bounds(self) -> tuple[float, float, float, float]:
        return self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2

    def pixel_mask(self, shape: tuple[int, int]) -> np.ndarray:
        """Pixels whose centers lie inside the box."""
        x0, y0, x1, y1 = _pixel_range(self.cx, self.cy, self.w, self.h, shape)
        mask = np.zeros(shape, dtype=bool)
        if x1 >= x0 and y1 >= y0:
            mask[y0 : y1 + 1, x0 : x1 + 1] = True
        return mask


def _pixel_range(cx, cy, w, h, shape):
    H, W = shape
    x0 = max(0, int(math.ceil(cx - w / 2 - 1e-9)))
    x1 = min(W - 1, int(math.floor(cx + w / 2 + 1e-9)))
    y0 = max(0, int(math.ceil(cy - h / 2 - 1e-9)))
    y1 = min(H - 1, int(math.floor(cy + h / 2 + 1e-9)))
    return x0, y0, x1, y1


def threshold_value(N: NormalizedMeanTimeImage, omega, v, params: ThresholdParams) -> float:
    base = float(N.values[N.valid].mean()) if np.any(N.valid) else 0.0
    theta = base + params.a * float(np.linalg.norm(omega)) + params.b * float(np.linalg.norm(v)) + params.c
    return float(np.clip(theta, 0.0, 1.0))


def adaptive_threshold(N: NormalizedMeanTimeImage, omega, v, params: ThresholdParams = ThresholdParams()) -> SegmentedImage:
    theta = threshold_value(N, omega, v, params)
    # a saturated threshold passes nothing, not just the pixels that equal the maximum
    keep = N.valid & (N.values >= theta) & (theta < 1.0)
    return SegmentedImage(np.where(keep, N.values, 0.0), theta)


def preprocess(S, kernel: int = 3) -> np.ndarray:
    """Grey opening, then mean filter, then element-wise square."""
    S = np.asarray(getattr(S, "values", S), dtype=np.float64)
    opened = ndimage.grey_opening(S, size=(kernel, kernel), mode="nearest")
    smoothed = ndimage.uniform_filter(opened, size=kernel, mode="constant", cval=0.0)
    return smoothed**2


def _truncated_moments(mu, sigma, lo, hi):
    a, b = (lo - mu) / sigma, (hi - mu) / sigma
    Z = max(special.ndtr(b) - special.ndtr(a), 1e-300)
    pa, pb = math.exp(-0.5 * a * a) / math.sqrt(2 * math.pi), math.exp(-0.5 * b * b) / math.sqrt(2 * math.pi)
    shift = (pa - pb) / Z
    mean = mu + sigma * shift
    var = sigma**2 * (1.0 + (a * pa - b * pb) / Z - shift**2)
    return mean, var


def fit_truncated_gaussian(coords: np.ndarray, weights: np.ndarray, lo: float, hi: float) -> tuple[float, float]:
    """Mean and std of the Gaussian whose restriction to [lo, hi] has the
    same weighted mean and variance as the samples.

    Variance is corrected for pixel binning (Sheppard).  The std is capped at
    the window width, the regime where the data no longer looks Gaussian.
    """
    total = weights.sum()
    m = float((weights * coords).sum() / total)
    var = float((weights * (coords - m) ** 2).sum() / total) - 1.0 / 12.0
    s = math.sqrt(max(var, 1e-6))
    width = hi - lo
    if m - lo > 6 * s and hi - m > 6 * s:
        return m, s
    if s >= width / math.sqrt(12.0) * 0.999:
        return m, width

    def residual(p):
        mean, v = _truncated_moments(p[0], p[1], lo, hi)
        return [(mean - m) / s, (math.sqrt(max(v, 0.0)) - s) / s]

    sol = optimize.least_squares(
        residual, x0=[m, s], bounds=([lo - width, 1e-3], [hi + width, width]),
        xtol=1e-10, ftol=1e-12,
    )
    return float(sol.x[0]), float(sol.x[1])


def _fit_box(S: np.ndarray, cx, cy, w, h):
    x0, y0, x1, y1 = _pixel_range(cx, cy, w, h, S.shape)
    if x1 < x0 or y1 < y0:
        return None
    patch = S[y0 : y1 + 1, x0 : x1 + 1]
    mass = float(patch.sum())
    if mass <= 0:
        return None
    wx = patch.sum(axis=0)
    wy = patch.sum(axis=1)
    mx, sx = fit_truncated_gaussian(np.arange(x0, x1 + 1, dtype=np.float64), wx, x0 - 0.5, x1 + 0.5)
    my, sy = fit_truncated_gaussian(np.arange(y0, y1 + 1, dtype=np.float64), wy, y0 - 0.5, y1 + 0.5)
    return mx, my, sx, sy


def box_mass(S: np.ndarray, cx, cy, w, h) -> float:
    x0, y0, x1, y1 = _pixel_range(cx, cy, w, h, S.shape)
    if x1 < x0 or y1 < y0:
        return 0.0
    return float(S[y0 : y1 + 1, x0 : x1 + 1].sum())


def gaussian_fit_roi(
    S,
    k_max: int = 10,
    delta_c: float = 2.0,
    delta_l: float = 2.0,
    min_side: float = 3.0,
    init: Optional[tuple[float, float, float, float]] = None,
) -> Optional[DetectionROI]:
    """Iteratively refit an axis-aligned Gaussian to the pixels inside the box.

    Starts at the brightest pixel with a box of half the image size unless
    ``init = (cx, cy, w, h)`` is given.  Each step sets the center to the
    fitted mean and the sides to four fitted standard deviations.  Returns
    None for an all-zero image.
    """
    S = np.asarray(getattr(S, "values", S), dtype=np.float64)
    if not np.any(S > 0):
        return None
    H, W = S.shape
    if init is None:
        iy, ix = np.unravel_index(int(np.argmax(S)), S.shape)
        c = np.array([float(ix), float(iy)])
        L = np.array([W / 2.0, H / 2.0])
    else:
        c = np.array(init[:2], dtype=np.float64)
        L = np.array(init[2:], dtype=np.float64)
    converged = False
    iterations = 0
    for _ in range(k_max):
        fit = _fit_box(S, c[0], c[1], L[0], L[1])
        if fit is None:
            break
        iterations += 1
        mx, my, sx, sy = fit
        c_new = np.array([mx, my])
        L_new = np.maximum(4.0 * np.array([sx, sy]), min_side)
        done = np.linalg.norm(c_new - c) < delta_c and np.all(np.abs(L_new - L) < delta_l)
        c, L = c_new, L_new
        if done:
            converged = True
            break
    return DetectionROI(float(c[0]), float(c[1]), float(L[0]), float(L[1]), converged,
                        box_mass(S, c[0], c[1], L[0], L[1]), iterations)


def moving_region_retrieval(S, roi: Optional[DetectionROI] = None, min_side: float = 3.0) -> Optional[DetectionROI]:
    """Tight box of the 8-connected component of ``S >= mean(S)`` with the
    largest summed intensity."""
    S = np.asarray(getattr(S, "values", S), dtype=np.float64)
    if not np.any(S > 0):
        return None
    binary = (S >= S.mean()) & (S > 0)
    labels, n = ndimage.label(binary, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return None
    masses = np.asarray(ndimage.sum(S, labels, index=np.arange(1, n + 1)))
    best = int(np.argmax(masses))
    sl_y, sl_x = ndimage.find_objects(labels)[best]
    x0, x1 = sl_x.start, sl_x.stop - 1
    y0, y1 = sl_y.start, sl_y.stop - 1
    w = max(float(x1 - x0 + 1), min_side)
    h = max(float(y1 - y0 + 1), min_side)
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    iterations = roi.iterations if roi is not None else 0
    return DetectionROI(cx, cy, w, h, True, box_mass(S, cx, cy, w, h), iterations, retrieved=True)


def needs_retrieval(roi: DetectionROI, shape: tuple[int, int], config: DetectionConfig) -> bool:
    H, W = shape
    return (not roi.converged) or roi.area > config.runaway_fraction * W * H or roi.mass < config.min_mass


def detect(
    N: NormalizedMeanTimeImage,
    omega,
    v,
    params: ThresholdParams = ThresholdParams(),
    config: DetectionConfig = DetectionConfig(),
) -> tuple[Optional[DetectionROI], np.ndarray]:
    """Full detection chain; returns the ROI (or None) and the filtered image."""
    S = adaptive_threshold(N, omega, v, params)
    F = preprocess(S.values, config.kernel)
    roi = gaussian_fit_roi(F, config.k_max, config.delta_c, config.delta_l, config.min_side)
    if roi is not None and needs_retrieval(roi, F.shape, config):
        roi = moving_region_retrieval(F, roi, config.min_side)
    return roi, F


def roi_time(roi: DetectionROI, T_values: np.ndarray, T_valid: np.ndarray, weights: np.ndarray) -> Optional[float]:
    """Weighted mean timestamp of the valid pixels inside the ROI."""
    mask = roi.pixel_mask(T_values.shape) & T_valid & (weights > 0)
    if not np.any(mask):
        mask = roi.pixel_mask(T_values.shape) & T_valid
        if not np.any(mask):
            return None
        return float(T_values[mask].mean())
    w = weights[mask]
    return float((w * T_values[mask]).sum() / w.sum())


def write_detection_log(path: Union[str, pathlib.Path], rows: Sequence[tuple[float, DetectionROI]]) -> None:
    with open(path, "w") as f:
        f.write("# t0,cx,cy,w,h,mass,converged\n")
        for t0, roi in rows:
            f.write(f"{t0:.9f},{roi.cx:.6f},{roi.cy:.6f},{roi.w:.6f},{roi.h:.6f},{roi.mass:.9g},{int(roi.converged)}\n")


def read_detection_log(path) -> list[tuple[float, DetectionROI]]:
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            t0, cx, cy, w, h, mass, conv = line.strip().split(",")
            rows.append((float(t0), DetectionROI(float(cx), float(cy), float(w), float(h), bool(int(conv)), float(mass))))
    return rows
