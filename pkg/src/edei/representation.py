"""Fixed-shape tensor encodings of event windows.

Events deposit their signed polarity into B temporal bins with bilinear
weights, so the grid conserves total polarity mass per pixel. The deblur
path reads the window [t_s, t_e]; the enhancement path reads
[t_s - delta_t, t_s + delta_t]; both get concatenated channel-wise with
their image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EventStream, ExposureSample, ExposureTiming

DEFAULT_BINS = 6


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """B x H x W signed polarity mass over a time window."""

    data: np.ndarray
    window: tuple[float, float]

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    def total_mass(self) -> float:
        return float(self.data.sum())


def voxelize(events: EventStream, window: tuple[float, float], bins: int = DEFAULT_BINS) -> VoxelGrid:
    """Deposit in-window events into `bins` temporal bins, bilinearly split
    between the two nearest bin centers."""
    t0, t1 = float(window[0]), float(window[1])
    if t0 >= t1:
        raise ValueError(f"degenerate window [{t0:g}, {t1:g}]")
    if bins < 1:
        raise ValueError("bins must be >= 1")
    h, w = events.sensor_shape
    grid = np.zeros((bins, h, w), dtype=np.float64)

    mask = (events.t >= t0) & (events.t <= t1)
    if not np.any(mask):
        return VoxelGrid(grid, (t0, t1))
    t = events.t[mask]
    x = events.x[mask]
    y = events.y[mask]
    p = events.p[mask].astype(np.float64)

    if bins == 1:
        u = np.zeros_like(t)
    else:
        u = (t - t0) / (t1 - t0) * (bins - 1)
    lo = np.floor(u).astype(np.int64)
    frac = u - lo
    np.add.at(grid, (lo, y, x), p * (1.0 - frac))
    hi_ok = lo + 1 < bins
    np.add.at(grid, (lo[hi_ok] + 1, y[hi_ok], x[hi_ok]), p[hi_ok] * frac[hi_ok])
    return VoxelGrid(grid, (t0, t1))


def perturb_window(timing: ExposureTiming, epsilon: float) -> tuple[float, float]:
    """Deblur-path event window with its start moved by epsilon of the
    acquisition gap: [t_s - eps * (t_b - t_s), t_e]."""
    if abs(epsilon) > 0.5:
        raise ValueError("epsilon must lie in [-0.5, 0.5]")
    return timing.t_s - epsilon * timing.exposure_gap, timing.t_e


def network_inputs(
    sample: ExposureSample,
    bins: int = DEFAULT_BINS,
    deblur_window: tuple[float, float] | None = None,
    enhance_window: tuple[float, float] | None = None,
) -> dict[str, np.ndarray]:
    """Float32 arrays ready for the network: CHW images and BHW voxel grids.

    Window overrides support the temporal-robustness sweep; defaults are the
    sample's own deblur/enhance windows.
    """
    if deblur_window is None:
        deblur_window = sample.timing.deblur_window()
    if enhance_window is None:
        enhance_window = sample.timing.enhance_window()
    chw = lambda f: np.ascontiguousarray(f.pixels.transpose(2, 0, 1), dtype=np.float32)
    return {
        "image_long": chw(sample.long),
        "image_short": chw(sample.short),
        "events_long": voxelize(sample.events, deblur_window, bins).data.astype(np.float32),
        "events_short": voxelize(sample.events, enhance_window, bins).data.astype(np.float32),
        "target": chw(sample.gt),
    }
