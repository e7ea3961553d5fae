"""Figures for a run directory, rendered headless to PNG."""

from __future__ import annotations

import pathlib
import warnings
from typing import Optional, Sequence, Union

import numpy as np
from matplotlib.figure import Figure
from matplotlib.patches import Rectangle

PathLike = Union[str, pathlib.Path]
_METADATA = {"Software": None}  # keeps PNG bytes independent of the matplotlib version


def _save(fig: Figure, path: pathlib.Path) -> pathlib.Path:
    fig.savefig(path, dpi=100, metadata=_METADATA)
    return path


def _load_csv(path: pathlib.Path, columns: int) -> np.ndarray:
    """Numeric CSV with ``#`` comments; empty or missing files give an empty table."""
    if not path.exists():
        return np.empty((0, columns))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty-file warning
        data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2, usecols=range(columns))
    return data.reshape(-1, columns)


def plot_trajectory(estimate: np.ndarray, truth: Optional[np.ndarray], path: PathLike) -> pathlib.Path:
    """Per-axis position over time; rows are ``t, x, y, z``."""
    fig = Figure(figsize=(8, 6))
    axes = fig.subplots(3, 1, sharex=True)
    for i, (ax, name) in enumerate(zip(axes, "xyz")):
        if truth is not None and len(truth):
            ax.plot(truth[:, 0], truth[:, i + 1], "k-", lw=1.0, label="ground truth")
        ax.plot(estimate[:, 0], estimate[:, i + 1], "C0--", lw=1.5, label="estimate")
        ax.set_ylabel(f"{name} [m]")
        ax.grid(alpha=0.3)
    axes[0].legend(loc="best", fontsize=8)
    axes[-1].set_xlabel("t [s]")
    fig.suptitle("Ballistic trajectory")
    return _save(fig, pathlib.Path(path))


def plot_contrast(rows: np.ndarray, path: PathLike) -> pathlib.Path:
    fig = Figure(figsize=(7, 3.5))
    ax = fig.subplots()
    if len(rows):
        ax.bar(rows[:, 0], 100.0 * rows[:, 1], width=0.8 * np.min(np.diff(rows[:, 0]), initial=0.025))
        ax.axhline(100.0 * rows[:, 1].mean(), color="C3", lw=1, label=f"mean {100 * rows[:, 1].mean():.1f}%")
        ax.legend(loc="best", fontsize=8)
    ax.set_xlabel("window start [s]")
    ax.set_ylabel("relative contrast [%]")
    ax.grid(alpha=0.3)
    return _save(fig, pathlib.Path(path))


def plot_detections(rows: np.ndarray, path: PathLike, width: int, height: int) -> pathlib.Path:
    """ROI centers and extents on the image plane; rows are ``t0, cx, cy, w, h``."""
    fig = Figure(figsize=(6, 4.5))
    ax = fig.subplots()
    for t0, cx, cy, w, h in rows[:, :5]:
        ax.add_patch(Rectangle((cx - w / 2, cy - h / 2), w, h, fill=False, lw=0.8, color="C1"))
    if len(rows):
        sc = ax.scatter(rows[:, 1], rows[:, 2], c=rows[:, 0], s=12, cmap="viridis")
        fig.colorbar(sc, ax=ax, label="window start [s]")
    ax.set_xlim(0, width)
    ax.set_ylim(height, 0)
    ax.set_aspect("equal")
    ax.set_xlabel("x [px]")
    ax.set_ylabel("y [px]")
    ax.set_title("Detections")
    return _save(fig, pathlib.Path(path))


def plot_time_images(images: Sequence[tuple[float, np.ndarray, object, object]], path: PathLike,
                     columns: int = 3) -> pathlib.Path:
    """Normalized mean-time images with the detected ROI (orange) and true box (white).

    ``images`` holds ``(t0, N, roi or None, box or None)``.
    """
    n = max(len(images), 1)
    rows = (n + columns - 1) // columns
    fig = Figure(figsize=(3.2 * columns, 2.6 * rows))
    axes = np.atleast_1d(fig.subplots(rows, columns)).ravel()
    for ax in axes:
        ax.set_axis_off()
    for ax, (t0, N, roi, box) in zip(axes, images):
        ax.imshow(N, cmap="magma", vmin=0.0, vmax=1.0, interpolation="nearest")
        if box is not None:
            x0, y0, x1, y1 = box
            ax.add_patch(Rectangle((x0, y0), x1 - x0, y1 - y0, fill=False, lw=0.8, color="white"))
        if roi is not None:
            ax.add_patch(Rectangle((roi.cx - roi.w / 2, roi.cy - roi.h / 2), roi.w, roi.h, fill=False, lw=1.0,
                                   color="C1"))
        ax.set_title(f"t0 = {t0:.3f} s", fontsize=8)
    fig.tight_layout()
    return _save(fig, pathlib.Path(path))


def render_report_figures(run_dir: PathLike, outdir: Optional[PathLike] = None, width: int = 240,
                          height: int = 180) -> list[pathlib.Path]:
    """Figures that can be rebuilt from the files of a finished run."""
    run_dir = pathlib.Path(run_dir)
    outdir = pathlib.Path(outdir) if outdir is not None else run_dir / "figures"
    outdir.mkdir(parents=True, exist_ok=True)
    written = [plot_contrast(_load_csv(run_dir / "contrast.csv", 2), outdir / "contrast.png"),
               plot_detections(_load_csv(run_dir / "detections.csv", 5), outdir / "detections.png", width, height)]
    est = _load_csv(run_dir / "trajectory_samples.csv", 4)
    if len(est):
        truth = _load_csv(run_dir / "truth_samples.csv", 4)
        written.append(plot_trajectory(est, truth if len(truth) else None, outdir / "trajectory.png"))
    return written


def render_run_figures(result, dataset, cfg, outdir: PathLike, max_images: int = 6) -> list[pathlib.Path]:
    """Report figures plus a mosaic of mean-time images from the in-memory run."""
    outdir = pathlib.Path(outdir)
    K = cfg.camera
    written = render_report_figures(cfg.output_dir, outdir, K.width, K.height)
    dt = cfg.pipeline.window
    boxes = {round(w.t0 / dt): w.box for w in (dataset.truth_windows or [])}
    shown = [r for r in result.windows if r.N is not None]
    detected = [r for r in shown if r.roi is not None]
    picks = detected or shown
    if picks:
        step = max(1, len(picks) // max_images)
        chosen = picks[::step][:max_images]
        images = [(r.t0, r.N, r.roi, boxes.get(round(r.t0 / dt))) for r in chosen]
        written.append(plot_time_images(images, outdir / "mean_time_images.png"))
    return written
