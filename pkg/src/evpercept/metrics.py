"""Evaluation metrics: relative contrast of compensated images and APE."""

from __future__ import annotations

import dataclasses
import pathlib
from typing import Optional, Union

import numpy as np
from scipy import ndimage


class MetricError(ValueError):
    pass


def denoise(image: np.ndarray) -> np.ndarray:
    """The single denoising step applied to every mode before comparison."""
    return ndimage.median_filter(np.asarray(image, dtype=np.float64), size=3, mode="nearest")


def box_mask(shape: tuple[int, int], box: tuple[float, float, float, float]) -> np.ndarray:
    """Pixels with centers inside ``(xmin, ymin, xmax, ymax)``."""
    H, W = shape
    x0, y0, x1, y1 = box
    xs = np.arange(W)
    ys = np.arange(H)
    return ((ys[:, None] >= y0) & (ys[:, None] <= y1)) & ((xs[None, :] >= x0) & (xs[None, :] <= x1))


def relative_contrast(image: np.ndarray, object_mask: np.ndarray, denoised: bool = False) -> float:
    """``(max over M - max over the rest) / max over M``; may be negative."""
    img = np.asarray(image, dtype=np.float64)
    if not denoised:
        img = denoise(img)
    M = np.asarray(object_mask, dtype=bool)
    if M.shape != img.shape:
        raise MetricError("object mask shape differs from the image")
    if not np.any(M):
        raise MetricError("object region is empty")
    m_max = float(img[M].max())
    if m_max <= 0:
        raise MetricError("object region has no positive value")
    b_max = float(img[~M].max()) if np.any(~M) else 0.0
    return (m_max - b_max) / m_max


@dataclasses.dataclass(frozen=True)
class APE:
    mean: float
    min: float
    max: float
    rmse: float
    n: int


def ape(estimate_fn, gt_times: np.ndarray, gt_positions: np.ndarray, t_start: float, t_end: float) -> APE:
    """Position error at every ground-truth sample inside ``[t_start, t_end]``.

    ``estimate_fn(times) -> (n, 3)`` evaluates the estimated trajectory.
    """
    gt_times = np.asarray(gt_times, dtype=np.float64)
    gt_positions = np.asarray(gt_positions, dtype=np.float64).reshape(-1, 3)
    sel = (gt_times >= t_start - 1e-12) & (gt_times <= t_end + 1e-12)
    if not np.any(sel):
        raise MetricError(f"no ground-truth sample in [{t_start:.6f}, {t_end:.6f}]")
    err = np.linalg.norm(estimate_fn(gt_times[sel]) - gt_positions[sel], axis=1)
    return APE(float(err.mean()), float(err.min()), float(err.max()), float(np.sqrt(np.mean(err**2))), int(len(err)))


@dataclasses.dataclass
class MetricsReport:
    contrast: list = dataclasses.field(default_factory=list)  # [(t0, eta)]
    compensation_ms: list = dataclasses.field(default_factory=list)
    ape: Optional[APE] = None
    detection_rate: Optional[float] = None
    windows: int = 0
    detections: int = 0
    depth_measurements: int = 0
    failures: list = dataclasses.field(default_factory=list)  # [(t0, stage, message)]

    def timing_summary(self) -> tuple[float, float, float]:
        if not self.compensation_ms:
            return 0.0, 0.0, 0.0
        a = np.asarray(self.compensation_ms)
        return float(a.min()), float(a.mean()), float(a.max())

    def mean_contrast(self) -> Optional[float]:
        if not self.contrast:
            return None
        return float(np.mean([eta for _, eta in self.contrast]))

    def metric_lines(self) -> list[str]:
        """Deterministic key=value lines (no wall-clock values)."""
        lines = [f"windows={self.windows}", f"detections={self.detections}",
                 f"depth_measurements={self.depth_measurements}"]
        if self.detection_rate is not None:
            lines.append(f"detection_rate={self.detection_rate:.6f}")
        mean_eta = self.mean_contrast()
        if mean_eta is not None:
            etas = [eta for _, eta in self.contrast]
            lines += [f"contrast_mean={mean_eta:.6f}", f"contrast_min={min(etas):.6f}", f"contrast_max={max(etas):.6f}"]
        if self.ape is not None:
            a = self.ape
            lines += [f"ape_mean={a.mean:.6f}", f"ape_min={a.min:.6f}", f"ape_max={a.max:.6f}",
                      f"ape_rmse={a.rmse:.6f}", f"ape_samples={a.n}"]
        lines.append(f"failures={len(self.failures)}")
        return lines

    def write(self, run_dir: Union[str, pathlib.Path]) -> None:
        run_dir = pathlib.Path(run_dir)
        with open(run_dir / "metrics.txt", "w") as f:
            f.write("\n".join(self.metric_lines()) + "\n")
        with open(run_dir / "contrast.csv", "w") as f:
            f.write("# t0,eta\n")
            for t0, eta in self.contrast:
                f.write(f"{t0:.9f},{eta:.6f}\n")
        lo, avg, hi = self.timing_summary()
        with open(run_dir / "timing.txt", "w") as f:
            f.write(f"compensation_ms_min={lo:.3f}\ncompensation_ms_avg={avg:.3f}\ncompensation_ms_max={hi:.3f}\n")
        with open(run_dir / "failures.log", "w") as f:
            for t0, stage, msg in self.failures:
                f.write(f"{t0:.9f} {stage}: {msg}\n")


def read_metrics(path: Union[str, pathlib.Path]) -> dict[str, float]:
    out = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise MetricError(f"{path}:{lineno}: expected key=value")
            out[key] = float(value)
    return out
