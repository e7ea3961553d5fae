"""Event-count, mean-time and normalized mean-time images."""

from __future__ import annotations

import dataclasses
import pathlib
from typing import Union

import numpy as np

from .events import PixelGroups


class EmptyImageError(ValueError):
    """The image has no valid (non-zero count) pixel."""


@dataclasses.dataclass(frozen=True)
class CountImage:
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclasses.dataclass(frozen=True)
class MeanTimeImage:
    """Average timestamp per pixel; ``valid`` marks pixels with events."""

    values: np.ndarray
    valid: np.ndarray


@dataclasses.dataclass(frozen=True)
class NormalizedMeanTimeImage:
    values: np.ndarray
    valid: np.ndarray
    t_min: float
    t_max: float

    @property
    def shape(self):
        return self.values.shape


def build_count_image(groups: PixelGroups) -> CountImage:
    return CountImage(groups.counts())


def build_mean_time_image(groups: PixelGroups, reference: float = 0.0) -> MeanTimeImage:
    # summing offsets from ``reference`` keeps float64 sums well conditioned
    counts = groups.counts()
    sums = groups.time_sums(reference)
    valid = counts > 0
    values = np.zeros(counts.shape)
    values[valid] = sums[valid] / counts[valid] + reference
    return MeanTimeImage(values, valid)


def normalize(T: MeanTimeImage) -> NormalizedMeanTimeImage:
    """Affine rescale of the valid pixels to [0, 1]; invalid pixels are 0."""
    if not np.any(T.valid):
        raise EmptyImageError("mean-time image has no valid pixel")
    vals = T.values[T.valid]
    lo, hi = float(vals.min()), float(vals.max())
    out = np.zeros(T.values.shape)
    if hi > lo:
        out[T.valid] = (vals - lo) / (hi - lo)
    return NormalizedMeanTimeImage(out, T.valid.copy(), lo, hi)


def write_pgm16(path: Union[str, pathlib.Path], image: np.ndarray) -> None:
    """Binary 16-bit PGM (P5, big-endian samples)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("expected a 2-D image")
    data = np.clip(img, 0, 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm16(path: Union[str, pathlib.Path]) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(x) for x in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    size = w * h * np.dtype(dtype).itemsize
    if len(raw) - pos < size:
        raise ValueError(f"{path}: truncated PGM data")
    return np.frombuffer(raw[pos : pos + size], dtype=dtype).reshape(h, w).astype(np.uint16)


def dump_normalized(path: Union[str, pathlib.Path], N: NormalizedMeanTimeImage, t0: float, dt: float) -> None:
    """Write N as a 16-bit PGM and a sidecar ``.txt`` with the time range."""
    path = pathlib.Path(path)
    write_pgm16(path, np.rint(N.values * 65535))
    with open(path.with_suffix(".txt"), "w") as f:
        f.write(f"t0 {t0:.9f}\ndt {dt:.9f}\nmin_T {N.t_min:.9f}\nmax_T {N.t_max:.9f}\n")
