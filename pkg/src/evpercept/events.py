"""Event containers, fixed-window buffering and per-pixel grouping."""

from __future__ import annotations

import dataclasses
import math
import pathlib
import re
from typing import Iterator, Optional, Union

import numpy as np
import pandas as pd

DEFAULT_WINDOW = 0.025


class EventOrderError(ValueError):
    """Event timestamps are not non-decreasing."""


class EventFileError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: float
    polarity: int = 1


def _ro(a, dtype) -> np.ndarray:
    arr = np.ascontiguousarray(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclasses.dataclass(frozen=True)
class EventStream:
    """Column-oriented, time-sorted event sequence."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        object.__setattr__(self, "t", _ro(self.t, np.float64))
        object.__setattr__(self, "x", _ro(self.x, np.int32))
        object.__setattr__(self, "y", _ro(self.y, np.int32))
        object.__setattr__(self, "polarity", _ro(self.polarity, np.int8))
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.polarity) == n):
            raise ValueError("event columns differ in length")

    @classmethod
    def from_events(cls, events: list[Event], width: int, height: int) -> "EventStream":
        return cls(
            np.array([e.t for e in events], dtype=np.float64),
            np.array([e.x for e in events], dtype=np.int32),
            np.array([e.y for e in events], dtype=np.int32),
            np.array([e.polarity for e in events], dtype=np.int8),
            width,
            height,
        )

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0), width, height)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.polarity[i]))

    def slice(self, start: int, stop: int) -> "EventStream":
        return EventStream(
            self.t[start:stop], self.x[start:stop], self.y[start:stop],
            self.polarity[start:stop], self.width, self.height,
        )


@dataclasses.dataclass(frozen=True)
class EventBuffer:
    """Events with ``t0 <= t < t0 + dt``."""

    t0: float
    dt: float
    events: EventStream

    def __post_init__(self):
        t = self.events.t
        if len(t) and (t[0] < self.t0 or t[-1] >= self.t0 + self.dt + 1e-12):
            raise ValueError("event outside buffer window")

    def __len__(self) -> int:
        return len(self.events)

    @property
    def t1(self) -> float:
        return self.t0 + self.dt


def check_sorted(t: np.ndarray) -> None:
    if len(t) > 1 and np.any(np.diff(t) < 0):
        raise EventOrderError("event timestamps must be non-decreasing")


def window_stream(
    events: EventStream,
    dt: float = DEFAULT_WINDOW,
    t_start: Optional[float] = None,
    t_end: Optional[float] = None,
    keep_empty: bool = False,
) -> list[EventBuffer]:
    """Partition a sorted stream into consecutive windows of length ``dt``.

    Windows start at ``t_start`` (default: the first event time). Empty
    windows are skipped unless ``keep_empty`` is set, in which case the
    windows cover up to ``t_end``.
    """
    if dt <= 0:
        raise ValueError("window length must be positive")
    check_sorted(events.t)
    if len(events) == 0 and t_end is None:
        return []
    start = float(events.t[0]) if t_start is None else float(t_start)
    last = float(events.t[-1]) if len(events) else start
    if t_end is not None:
        last = max(last, float(t_end) - 1e-12)
    n_windows = int(math.floor((last - start) / dt)) + 1
    # bounds from integer multiples avoid drift over long streams
    edges = start + dt * np.arange(n_windows + 1)
    cuts = np.searchsorted(events.t, edges, side="left")
    buffers = []
    for k in range(n_windows):
        a, b = int(cuts[k]), int(cuts[k + 1])
        if a == b and not keep_empty:
            continue
        buffers.append(EventBuffer(float(edges[k]), float(dt), events.slice(a, b)))
    return buffers


@dataclasses.dataclass(frozen=True)
class PixelGroups:
    """Compensated events grouped by integer pixel.

    ``index`` holds the linear pixel index ``y * width + x`` of each kept
    event and ``t`` its original timestamp.
    """

    index: np.ndarray
    t: np.ndarray
    width: int
    height: int
    dropped: int

    def __len__(self) -> int:
        return len(np.unique(self.index))

    @property
    def n_events(self) -> int:
        return len(self.index)

    def __getitem__(self, pixel: tuple[int, int]) -> np.ndarray:
        i, j = pixel
        return self.t[self.index == j * self.width + i]

    def counts(self) -> np.ndarray:
        return np.bincount(self.index, minlength=self.width * self.height).reshape(self.height, self.width)

    def time_sums(self, reference: float = 0.0) -> np.ndarray:
        return np.bincount(
            self.index, weights=self.t - reference, minlength=self.width * self.height
        ).reshape(self.height, self.width)

    def as_dict(self) -> dict[tuple[int, int], np.ndarray]:
        out = {}
        order = np.argsort(self.index, kind="stable")
        idx, ts = self.index[order], self.t[order]
        uniq, starts = np.unique(idx, return_index=True)
        bounds = np.append(starts, len(idx))
        for k, lin in enumerate(uniq):
            out[(int(lin % self.width), int(lin // self.width))] = ts[bounds[k] : bounds[k + 1]]
        return out


def group_by_pixel(x, y, t, width: int, height: int, valid: Optional[np.ndarray] = None) -> PixelGroups:
    """Round warped coordinates to the nearest pixel and group by pixel.

    Events that fall outside the frame (or are not ``valid``) are dropped
    and counted.
    """
    xi = np.rint(np.asarray(x, dtype=np.float64))
    yi = np.rint(np.asarray(y, dtype=np.float64))
    keep = (xi >= 0) & (xi < width) & (yi >= 0) & (yi < height)
    if valid is not None:
        keep &= valid
    index = yi[keep].astype(np.int64) * width + xi[keep].astype(np.int64)
    t = np.asarray(t, dtype=np.float64)[keep]
    return PixelGroups(index, t, width, height, int(keep.size - np.count_nonzero(keep)))


_HEADER = re.compile(r"#\s*width\s*=\s*(\d+)\s+height\s*=\s*(\d+)")


def read_event_file(path: Union[str, pathlib.Path]) -> EventStream:
    """Read ``t,x,y,polarity`` lines after a ``# width=W height=H`` header."""
    path = pathlib.Path(path)
    with open(path) as f:
        first = f.readline()
    match = _HEADER.match(first.strip())
    if not match:
        raise EventFileError(f"{path}:1: missing '# width=W height=H' header")
    width, height = int(match.group(1)), int(match.group(2))
    try:
        df = pd.read_csv(
            path, comment="#", header=None, names=["t", "x", "y", "p"],
            dtype={"t": np.float64, "x": np.int64, "y": np.int64, "p": np.int64},
        )
    except (ValueError, pd.errors.ParserError) as exc:
        raise EventFileError(f"{path}: {exc}") from None
    if df.isna().any().any():
        row = int(np.flatnonzero(df.isna().any(axis=1).to_numpy())[0])
        raise EventFileError(f"{path}:{row + 2}: missing field")
    t, x, y, p = (df[c].to_numpy() for c in ("t", "x", "y", "p"))
    bad = (x < 0) | (x >= width) | (y < 0) | (y >= height) | ~np.isin(p, (-1, 1)) | (t < 0)
    if np.any(bad):
        raise EventFileError(f"{path}:{int(np.flatnonzero(bad)[0]) + 2}: invalid event")
    if len(t) > 1 and np.any(np.diff(t) < 0):
        raise EventFileError(f"{path}:{int(np.flatnonzero(np.diff(t) < 0)[0]) + 3}: timestamps out of order")
    return EventStream(t, x, y, p, width, height)


def write_event_file(path: Union[str, pathlib.Path], events: EventStream) -> None:
    with open(path, "w") as f:
        f.write(f"# width={events.width} height={events.height}\n")
        if len(events):
            df = pd.DataFrame(
                {"t": events.t, "x": events.x, "y": events.y, "p": events.polarity.astype(np.int64)}
            )
            df.to_csv(f, header=False, index=False, float_format="%.9f", lineterminator="\n")
