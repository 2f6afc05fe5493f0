"""Shared fixtures: procedural moving scenes and independent oracles."""
from __future__ import annotations

import math

import cv2
import numpy as np

from edei.core import EPS_LOG, Frame, FrameSequence
from edei.synthesis import SynthesisRecipe, interpolate, make_sample


def smooth_texture(h: int, w: int, seed: int = 0, sigma: float = 2.0, channels: int = 3) -> np.ndarray:
    """Band-limited random texture in [0.05, 0.95] (good flow/event content)."""
    rng = np.random.default_rng(seed)
    tex = cv2.GaussianBlur(rng.random((h, w, channels)), (0, 0), sigma)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 0.05 + 0.9 * tex


def moving_sequence(
    size: int = 64,
    n_frames: int = 60,
    velocity: float = 0.7,
    offset: int = 0,
    fps: float = 24.0,
    seed: int = 0,
) -> FrameSequence:
    """A window sliding over a wrapped texture with subpixel motion."""
    tex = smooth_texture(size * 2, size * 3 + 160, seed=seed)
    h, w = tex.shape[:2]
    frames, times = [], []
    for k in range(n_frames):
        m = np.float32([[1, 0, -k * velocity], [0, 1, 0]])
        shifted = cv2.warpAffine(tex, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_WRAP)
        frames.append(Frame(np.clip(shifted[size // 2 : size // 2 + size, offset : offset + size], 0, 1)))
        times.append(k / fps)
    return FrameSequence(frames, times)


def static_sequence(size: int = 64, n_frames: int = 60, fps: float = 24.0, seed: int = 0) -> FrameSequence:
    frame = Frame(smooth_texture(size, size, seed=seed))
    return FrameSequence([frame] * n_frames, np.arange(n_frames) / fps)


def default_training_samples(recipe: SynthesisRecipe | None = None, size: int = 64):
    """Four samples with distinct motion, matching the scaled experiments."""
    recipe = recipe or SynthesisRecipe()
    specs = [(0.5, 0, 0), (0.8, 40, 1), (1.1, 80, 2), (0.3, 120, 3)]
    samples = []
    for velocity, offset, seed in specs:
        seq = moving_sequence(size=size, velocity=velocity, offset=offset, seed=0)
        dense = interpolate(seq, recipe.interp_factor)
        t_s = float(dense.timestamps[recipe.resolved_gap_steps + 2])
        samples.append(make_sample(dense, recipe, t_s, sample_seed=seed))
    return samples


def warped_sequence(mode: str, seed: int, size: int = 96, n_frames: int = 60) -> FrameSequence:
    """Scenes with non-uniform motion (rotation/zoom) where alignment cannot
    be inferred from a single global shift."""
    rng = np.random.default_rng(seed)
    tex = cv2.GaussianBlur(rng.random((size * 2, size * 2, 3)), (0, 0), 1.5)
    tex = (tex - tex.min()) / (tex.max() - tex.min()) * 0.9 + 0.05
    h, w = tex.shape[:2]
    cx, cy = w / 2, h / 2
    frames, times = [], []
    for k in range(n_frames):
        if mode == "rot+":
            m = cv2.getRotationMatrix2D((cx, cy), k * 0.45, 1.0)
        elif mode == "rot-":
            m = cv2.getRotationMatrix2D((cx, cy), -k * 0.38, 1.0)
        elif mode == "zoom":
            m = cv2.getRotationMatrix2D((cx, cy), k * 0.2, 1.0 + k * 0.004)
        else:
            m = np.float32([[1, 0, -k * 2.0], [0, 1, -k * 0.8]])
        warped = cv2.warpAffine(tex, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT)
        y0, x0 = (h - size) // 2, (w - size) // 2
        frames.append(Frame(np.clip(warped[y0 : y0 + size, x0 : x0 + size], 0, 1)))
        times.append(k / 24.0)
    return FrameSequence(frames, times)


def motion_stress_samples() -> list:
    """Samples where events carry alignment information the frames alone do
    not: non-uniform motion and a heavily degraded short exposure."""
    from edei.synthesis import DegradationParams

    degradation = DegradationParams(alpha=0.95, beta=0.5, gamma=3.2, sigma_p=0.1, sigma_g=0.1)
    recipe = SynthesisRecipe(degradation=degradation)
    samples = []
    for i, mode in enumerate(["rot+", "rot-", "zoom", "shift"]):
        dense = interpolate(warped_sequence(mode, seed=i), recipe.interp_factor)
        t_s = float(dense.timestamps[recipe.resolved_gap_steps + 2])
        samples.append(make_sample(dense, recipe, t_s, sample_seed=i))
    return samples


# ---------------------------------------------------------------------------
# independent oracles


def brute_force_mean(seq: FrameSequence, t0: float, t1: float) -> np.ndarray:
    """Plain loop-accumulated mean of the frames inside [t0, t1]."""
    total = None
    count = 0
    for frame, t in zip(seq.frames, seq.timestamps):
        if t0 <= t <= t1:
            total = frame.pixels.copy() if total is None else total + frame.pixels
            count += 1
    assert count > 0
    return total / count


# the crossing rule fires on |delta| >= C up to a 1-ulp-scale slack, same
# definition as the production simulator
COUNT_SLACK = 1e-9


def crossing_count_oracle(seq: FrameSequence, threshold: float, degradation=None) -> np.ndarray:
    """Per-pixel event counts from a scalar step-by-step reference-crossing
    walk of the log luminance (no low-pass, no noise)."""
    h, w = seq.spatial_shape
    counts = np.zeros((h, w), dtype=np.int64)
    lumas = []
    for frame in seq.frames:
        y = frame.luma()
        if degradation is not None:
            y = degradation.darken(y)
        lumas.append(np.log(y + EPS_LOG))
    for yy in range(h):
        for xx in range(w):
            ref = lumas[0][yy, xx]
            for k in range(1, len(lumas)):
                value = lumas[k][yy, xx]
                delta = value - ref
                n = math.floor(abs(delta) / threshold + COUNT_SLACK)
                if n > 0:
                    sign = 1.0 if delta > 0 else -1.0
                    ref = ref + n * threshold * sign
                    counts[yy, xx] += n
    return counts


def signed_crossing_sum_oracle(seq: FrameSequence, threshold: float) -> np.ndarray:
    """Like crossing_count_oracle but accumulating signed counts."""
    h, w = seq.spatial_shape
    signed = np.zeros((h, w), dtype=np.int64)
    lumas = [np.log(f.luma() + EPS_LOG) for f in seq.frames]
    for yy in range(h):
        for xx in range(w):
            ref = lumas[0][yy, xx]
            for k in range(1, len(lumas)):
                delta = lumas[k][yy, xx] - ref
                n = math.floor(abs(delta) / threshold + COUNT_SLACK)
                if n > 0:
                    sign = 1 if delta > 0 else -1
                    ref = ref + n * threshold * sign
                    signed[yy, xx] += n * sign
    return signed
