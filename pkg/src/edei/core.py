"""Domain types shared by the synthesis, representation, model and eval layers.

All types are immutable value objects after construction: array fields are
copied and marked read-only, so instances can be shared across threads
without locks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

# Floor added inside every log(L): log intensity is undefined at L = 0.
EPS_LOG = 1e-4

# Rec.601 luma weights for RGB -> Y.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

MIN_FRAME_SIDE = 8


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Frame:
    """One radiometric image, H x W x C float64 with nominal range [0, 1].

    Values may exceed [0, 1] transiently (e.g. noisy darkened frames before
    clamping); persisted frames are clamped on write.
    """

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"frame must be HxW or HxWxC, got shape {arr.shape}")
        object.__setattr__(self, "pixels", _frozen_array(arr, np.float64))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]

    def luma(self) -> np.ndarray:
        """H x W Rec.601 luma (identity for single-channel frames)."""
        if self.channels == 1:
            return self.pixels[:, :, 0]
        return self.pixels @ LUMA_WEIGHTS

    def clamped(self) -> "Frame":
        return Frame(np.clip(self.pixels, 0.0, 1.0))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(
            self.pixels, other.pixels
        )


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Ordered frames with strictly increasing timestamps in seconds."""

    frames: tuple[Frame, ...]
    timestamps: np.ndarray

    def __init__(self, frames: Sequence[Frame], timestamps):
        frames = tuple(f if isinstance(f, Frame) else Frame(f) for f in frames)
        ts = _frozen_array(timestamps, np.float64)
        if ts.ndim != 1 or len(ts) != len(frames):
            raise ValueError("timestamps must be 1-D and match the frame count")
        if len(frames) == 0:
            raise ValueError("sequence must contain at least one frame")
        if len(ts) > 1 and not np.all(np.diff(ts) > 0):
            raise ValueError("timestamps must be strictly increasing")
        shape = frames[0].pixels.shape
        if any(f.pixels.shape != shape for f in frames):
            raise ValueError("all frames in a sequence must share one shape")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "timestamps", ts)

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.frames[0].spatial_shape

    def index_at(self, t: float, tol: float | None = None) -> int:
        """Index of the frame closest to t; error if farther than tol."""
        idx = int(np.argmin(np.abs(self.timestamps - t)))
        if tol is None:
            step = self.median_step() if len(self) > 1 else np.inf
            tol = 0.5 * step
        if abs(self.timestamps[idx] - t) > tol:
            raise ValueError(f"no frame within {tol:g}s of t={t:g}")
        return idx

    def median_step(self) -> float:
        if len(self) < 2:
            raise ValueError("need at least two frames for a time step")
        return float(np.median(np.diff(self.timestamps)))

    def window_indices(self, t0: float, t1: float) -> np.ndarray:
        """Indices of frames with t0 <= timestamp <= t1."""
        return np.flatnonzero((self.timestamps >= t0) & (self.timestamps <= t1))


class Event(NamedTuple):
    """One asynchronous brightness-change record."""

    t: float
    x: int
    y: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted event records with column storage.

    Columns t (float64 seconds), x, y (int32 pixel coords) and p (int8
    polarity, +1/-1). `sensor_shape` is (H, W); every event time is expected
    to lie inside `t_span` (validated by `validate_sample`, not here).
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray
    sensor_shape: tuple[int, int]
    t_span: tuple[float, float]

    def __init__(self, t, x, y, p, sensor_shape, t_span):
        t = _frozen_array(t, np.float64)
        x = _frozen_array(x, np.int32)
        y = _frozen_array(y, np.int32)
        p = _frozen_array(p, np.int8)
        if not (t.shape == x.shape == y.shape == p.shape) or t.ndim != 1:
            raise ValueError("event columns must be 1-D and equally sized")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "sensor_shape", (int(sensor_shape[0]), int(sensor_shape[1])))
        object.__setattr__(self, "t_span", (float(t_span[0]), float(t_span[1])))

    @classmethod
    def empty(cls, sensor_shape, t_span) -> "EventStream":
        return cls([], [], [], [], sensor_shape, t_span)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self.t)):
            yield Event(float(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))

    @property
    def duration(self) -> float:
        return self.t_span[1] - self.t_span[0]

    def clipped(self, t0: float, t1: float) -> "EventStream":
        """Events with t0 <= t <= t1, re-spanned to (t0, t1)."""
        m = (self.t >= t0) & (self.t <= t1)
        return EventStream(self.t[m], self.x[m], self.y[m], self.p[m], self.sensor_shape, (t0, t1))

    def shifted(self, dt: float) -> "EventStream":
        return EventStream(
            self.t + dt, self.x, self.y, self.p, self.sensor_shape,
            (self.t_span[0] + dt, self.t_span[1] + dt),
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.sensor_shape == other.sensor_shape
            and self.t_span == other.t_span
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )


@dataclass(frozen=True)
class ExposureTiming:
    """Acquisition timing: short-exposure instant t_s, long exposure
    [t_b, t_e], and the half-window delta_t used by the enhancement path.

    The expected order is t_s < t_b < t_e (short image acquired first);
    violations are reported by `validate_sample` rather than raised here.
    """

    t_s: float
    t_b: float
    t_e: float
    delta_t: float

    @property
    def exposure_time(self) -> float:
        """Long-exposure duration T = t_e - t_b."""
        return self.t_e - self.t_b

    @property
    def exposure_gap(self) -> float:
        """Interval T_i = t_b - t_s between the short instant and the long start."""
        return self.t_b - self.t_s

    def deblur_window(self) -> tuple[float, float]:
        return self.t_s, self.t_e

    def enhance_window(self) -> tuple[float, float]:
        return self.t_s - self.delta_t, self.t_s + self.delta_t


@dataclass(frozen=True, eq=False)
class ExposureSample:
    """One training tuple: noisy short exposure, blurry long exposure,
    the event stream covering both, the sharp target at t_s, and timing."""

    short: Frame
    long: Frame
    events: EventStream
    gt: Frame
    timing: ExposureTiming
    seed: int = 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, ExposureSample):
            return NotImplemented
        return (
            self.short == other.short
            and self.long == other.long
            and self.events == other.events
            and self.gt == other.gt
            and self.timing == other.timing
            and self.seed == other.seed
        )


def _frame_violations(name: str, frame: Frame) -> list[str]:
    out = []
    if not np.all(np.isfinite(frame.pixels)):
        out.append(f"{name} frame has non-finite values")
    if frame.height < MIN_FRAME_SIDE or frame.width < MIN_FRAME_SIDE:
        out.append(f"{name} frame smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}")
    if frame.channels not in (1, 3):
        out.append(f"{name} frame has {frame.channels} channels (expected 1 or 3)")
    if frame.pixels.size and (frame.pixels.min() < 0.0 or frame.pixels.max() > 1.0):
        out.append(f"{name} frame values outside [0,1]")
    return out


def validate_sample(sample: ExposureSample) -> list[str]:
    """Check every type invariant; returns violation descriptions.

    Reports rather than raises: an empty list means the sample is well formed.
    """
    violations: list[str] = []
    for name, frame in (("short", sample.short), ("long", sample.long), ("gt", sample.gt)):
        violations.extend(_frame_violations(name, frame))
    shapes = {sample.short.pixels.shape, sample.long.pixels.shape, sample.gt.pixels.shape}
    if len(shapes) != 1:
        violations.append("frames do not share one shape")

    ev = sample.events
    h, w = ev.sensor_shape
    if (h, w) != sample.gt.spatial_shape:
        violations.append("events sensor_shape does not match frames")
    if len(ev) and np.any(np.diff(ev.t) < 0):
        violations.append("events not time-sorted")
    if ev.t_span[1] <= ev.t_span[0]:
        violations.append("events t_span is empty or reversed")
    if len(ev):
        if ev.t.min() < ev.t_span[0] or ev.t.max() > ev.t_span[1]:
            violations.append("events outside t_span")
        if ev.x.min() < 0 or ev.x.max() >= w or ev.y.min() < 0 or ev.y.max() >= h:
            violations.append("event coordinates outside sensor")
        if not np.all(np.isin(ev.p, (-1, 1))):
            violations.append("event polarity not in {+1,-1}")

    tm = sample.timing
    if not (tm.t_s < tm.t_b < tm.t_e):
        violations.append("timing order violated")
    if tm.delta_t <= 0:
        violations.append("delta_t must be positive")
    return violations
