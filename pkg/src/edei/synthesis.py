"""Manufacture exposure samples from a sharp frame sequence.

Pipeline: linear frame interpolation to a dense grid, long-exposure
averaging over a window, darkening + signal-dependent noise for the short
exposure, and a log-threshold event simulator (first-order low-pass +
reference-crossing) run on the darkened luminance.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import EPS_LOG, EventStream, ExposureSample, ExposureTiming, Frame, FrameSequence

logger = logging.getLogger(__name__)

# Slack inside the crossing count floor(|delta| / C + EPS_COUNT): log changes
# that are exact multiples of C arise structurally (the reference lives on a
# C-quantized grid), and without slack a 1-ulp rounding would drop the final
# crossing.
EPS_COUNT = 1e-9


@dataclass(frozen=True)
class DegradationParams:
    """Darkening (alpha, beta, gamma) and noise (sigma_p, sigma_g) parameters.

    The class constants give the uniform sampling ranges used when
    randomizing per sample.
    """

    alpha: float = 0.95
    beta: float = 0.75
    gamma: float = 2.75
    sigma_p: float = 0.075
    sigma_g: float = 0.075

    ALPHA_RANGE = (0.9, 1.0)
    BETA_RANGE = (0.5, 1.0)
    GAMMA_RANGE = (2.0, 3.5)
    SIGMA_RANGE = (0.05, 0.1)

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0 and 0.0 < self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in (0, 1]")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")
        if self.sigma_p < 0.0 or self.sigma_g < 0.0:
            raise ValueError("noise sigmas must be non-negative")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "DegradationParams":
        return cls(
            alpha=rng.uniform(*cls.ALPHA_RANGE),
            beta=rng.uniform(*cls.BETA_RANGE),
            gamma=rng.uniform(*cls.GAMMA_RANGE),
            sigma_p=rng.uniform(*cls.SIGMA_RANGE),
            sigma_g=rng.uniform(*cls.SIGMA_RANGE),
        )

    def darken(self, values: np.ndarray) -> np.ndarray:
        """Deterministic darkening beta * (alpha * L) ** gamma."""
        return self.beta * np.power(self.alpha * values, self.gamma)


@dataclass(frozen=True)
class SimulatorConfig:
    """Event simulator knobs: contrast threshold, photoreceptor low-pass
    cutoff, spurious-event rate per pixel and refractory period."""

    threshold_c: float = 0.2
    cutoff_hz: float = 15.0
    noise_rate_hz: float = 1.0
    refractory_s: float = 0.0

    def __post_init__(self):
        if self.threshold_c <= 0.0:
            raise ValueError("contrast threshold must be positive")
        if self.cutoff_hz <= 0.0:
            raise ValueError("cutoff frequency must be positive")
        if self.refractory_s < 0.0:
            raise ValueError("refractory period must be non-negative")


@dataclass(frozen=True)
class SynthesisRecipe:
    """Everything needed to turn a sharp sequence into exposure samples.

    interp_factor frames are inserted between source neighbors; blur_count
    dense frames are averaged into the long exposure; exposure_ratio is
    long-exposure duration over the nominal short-exposure duration.
    gap_steps (t_b - t_s in dense-grid steps) defaults to the nominal
    short-exposure length so the acquisition gap matches it; delta_t for
    the enhancement window is delta_t_factor * (t_b - t_s).
    """

    interp_factor: int = 7
    blur_count: int = 49
    exposure_ratio: float = 7.0
    gap_steps: int | None = None
    delta_t_factor: float = 0.5
    sample_stride: int | None = None
    fps: float = 24.0
    randomize_degradation: bool = False
    degradation: DegradationParams = field(default_factory=DegradationParams)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.interp_factor < 0:
            raise ValueError("interp_factor must be >= 0")
        if self.blur_count < 1:
            raise ValueError("blur_count must be >= 1")
        if self.exposure_ratio <= 0:
            raise ValueError("exposure_ratio must be positive")
        if self.delta_t_factor <= 0:
            raise ValueError("delta_t_factor must be positive")

    @property
    def resolved_gap_steps(self) -> int:
        if self.gap_steps is not None:
            return self.gap_steps
        return max(1, round((self.blur_count - 1) / self.exposure_ratio))

    @property
    def resolved_stride(self) -> int:
        if self.sample_stride is not None:
            return self.sample_stride
        return self.resolved_gap_steps + self.blur_count

    def with_ratio(self, ratio: float) -> "SynthesisRecipe":
        """Recipe for another exposure ratio, holding the acquisition gap fixed.

        blur_count scales proportionally with the ratio; gap_steps is pinned
        to this recipe's resolved value so t_b - t_s is unchanged.
        """
        blur = max(2, round(self.blur_count * ratio / self.exposure_ratio))
        return replace(
            self, exposure_ratio=float(ratio), blur_count=blur, gap_steps=self.resolved_gap_steps
        )


def interpolate(seq: FrameSequence, factor: int) -> FrameSequence:
    """Insert `factor` linearly blended frames between each neighbor pair."""
    if factor < 0:
        raise ValueError("factor must be >= 0")
    if len(seq) < 2:
        raise ValueError("cannot interpolate: need at least two frames")
    if factor == 0:
        return seq
    frames: list[Frame] = []
    times: list[float] = []
    for i in range(len(seq) - 1):
        a, b = seq.frames[i].pixels, seq.frames[i + 1].pixels
        t0, t1 = seq.timestamps[i], seq.timestamps[i + 1]
        frames.append(seq.frames[i])
        times.append(t0)
        for j in range(1, factor + 1):
            w = j / (factor + 1)
            frames.append(Frame((1.0 - w) * a + w * b))
            times.append(t0 + w * (t1 - t0))
    frames.append(seq.frames[-1])
    times.append(seq.timestamps[-1])
    return FrameSequence(frames, times)


def synth_long(seq: FrameSequence, timing: ExposureTiming) -> Frame:
    """Pixel-wise mean of the frames inside [t_b, t_e]."""
    idx = seq.window_indices(timing.t_b, timing.t_e)
    if len(idx) == 0:
        raise ValueError(f"no frames in exposure window [{timing.t_b:g}, {timing.t_e:g}]")
    stack = np.stack([seq.frames[i].pixels for i in idx])
    return Frame(stack.mean(axis=0))


def synth_short(
    gt: Frame,
    params: DegradationParams,
    rng: np.random.Generator,
    clamp: bool = True,
) -> Frame:
    """Darken + add signal-dependent Gaussian noise.

    Draws from N(J, sigma_p * J + sigma_g^2) with J = beta * (alpha * L)^gamma;
    with both sigmas zero the result is exactly J. `clamp=False` skips the
    final [0,1] clamp (useful when checking the noise moments).
    """
    j = params.darken(gt.pixels)
    std = np.sqrt(params.sigma_p * j + params.sigma_g**2)
    noisy = j + rng.standard_normal(j.shape) * std
    if clamp:
        noisy = np.clip(noisy, 0.0, 1.0)
    return Frame(noisy)


def _sequence_luma(seq: FrameSequence, params: DegradationParams | None) -> np.ndarray:
    """(N, H, W) luminance stack, optionally darkened first."""
    stack = []
    for frame in seq.frames:
        y = frame.luma()
        if params is not None:
            y = params.darken(y)
        stack.append(y)
    return np.stack(stack)


def _quantize_us(t: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Round to whole microseconds, clamped onto the grid inside [lo, hi]."""
    q = np.round(t * 1e6) / 1e6
    return np.clip(q, math.ceil(lo * 1e6) / 1e6, math.floor(hi * 1e6) / 1e6)


def simulate_events(
    seq: FrameSequence,
    cfg: SimulatorConfig,
    rng: np.random.Generator,
    degradation: DegradationParams | None = None,
) -> EventStream:
    """Threshold-crossing event simulation on the (optionally darkened) luma.

    Per pixel, log(L + eps) is passed through a first-order low-pass with
    the configured cutoff; every time the filtered value departs a stored
    reference by >= C, floor(|delta| / C) events fire with linearly
    interpolated timestamps and the reference advances by that many C steps.
    Spurious +/-1 events are added as a per-pixel Poisson process.
    Timestamps are quantized to whole microseconds (file resolution).
    """
    if len(seq) < 2:
        raise ValueError("event simulation needs at least two frames")
    c = cfg.threshold_c
    h, w = seq.spatial_shape
    luma = _sequence_luma(seq, degradation)
    log_frames = np.log(luma + EPS_LOG)
    ts = seq.timestamps

    filtered = log_frames[0].copy()
    ref = log_frames[0].copy()
    last_event_t = np.full((h, w), -np.inf)
    yy, xx = np.mgrid[0:h, 0:w]

    ev_t: list[np.ndarray] = []
    ev_x: list[np.ndarray] = []
    ev_y: list[np.ndarray] = []
    ev_p: list[np.ndarray] = []
    max_step = 0.0

    for k in range(1, len(seq)):
        t0, t1 = ts[k - 1], ts[k]
        dt = t1 - t0
        if math.isinf(cfg.cutoff_hz):
            a = 1.0
        else:
            a = 1.0 - math.exp(-2.0 * math.pi * cfg.cutoff_hz * dt)
        new_filtered = filtered + a * (log_frames[k] - filtered)
        max_step = max(max_step, float(np.abs(new_filtered - filtered).max()))

        delta = new_filtered - ref
        counts = np.floor(np.abs(delta) / c + EPS_COUNT).astype(np.int64)
        fire = counts > 0
        if np.any(fire):
            n = counts[fire]
            sign = np.sign(delta[fire])
            total = int(n.sum())
            pix = np.repeat(np.flatnonzero(fire.ravel()), n)
            # crossing index 1..n_i per firing pixel
            j = np.arange(total) - np.repeat(np.cumsum(n) - n, n) + 1
            f0 = np.repeat(filtered[fire], n)
            f1 = np.repeat(new_filtered[fire], n)
            r0 = np.repeat(ref[fire], n)
            s = np.repeat(sign, n)
            level = r0 + j * c * s
            tc = t0 + (level - f0) / (f1 - f0) * dt
            tc = _quantize_us(tc, ts[0], ts[-1])

            px = xx.ravel()[pix]
            py = yy.ravel()[pix]
            keep = np.ones(total, dtype=bool)
            if cfg.refractory_s > 0.0:
                # drop events inside the dead time; the reference still
                # advances only for emitted events
                keep_list = []
                for m in range(total):
                    ok = tc[m] >= last_event_t[py[m], px[m]] + cfg.refractory_s
                    keep_list.append(ok)
                    if ok:
                        last_event_t[py[m], px[m]] = tc[m]
                keep = np.asarray(keep_list, dtype=bool)
                emitted = np.zeros((h, w), dtype=np.int64)
                np.add.at(emitted, (py[keep], px[keep]), 1)
                ref += emitted * c * np.sign(delta)
            else:
                ref[fire] += n * c * sign

            ev_t.append(tc[keep])
            ev_x.append(px[keep])
            ev_y.append(py[keep])
            ev_p.append(s[keep].astype(np.int8))
        filtered = new_filtered

    if max_step > 3.0 * c:
        logger.warning(
            "per-step log change up to %.3f exceeds 3C=%.3f; the sequence may be "
            "too sparse for faithful event timing", max_step, 3.0 * c,
        )

    if cfg.noise_rate_hz > 0.0:
        duration = float(ts[-1] - ts[0])
        counts = rng.poisson(cfg.noise_rate_hz * duration, size=(h, w))
        total = int(counts.sum())
        if total:
            pix = np.repeat(np.arange(h * w), counts.ravel())
            tn = _quantize_us(ts[0] + rng.uniform(0.0, duration, size=total), ts[0], ts[-1])
            pn = np.where(rng.random(total) < 0.5, 1, -1).astype(np.int8)
            ev_t.append(tn)
            ev_x.append(xx.ravel()[pix])
            ev_y.append(yy.ravel()[pix])
            ev_p.append(pn)

    if ev_t:
        t = np.concatenate(ev_t)
        x = np.concatenate(ev_x)
        y = np.concatenate(ev_y)
        p = np.concatenate(ev_p)
        order = np.argsort(t, kind="stable")
        t, x, y, p = t[order], x[order], y[order], p[order]
    else:
        t = x = y = p = np.empty(0)
    return EventStream(t, x, y, p, (h, w), (float(ts[0]), float(ts[-1])))


def sample_rng(recipe: SynthesisRecipe, sample_seed: int) -> np.random.Generator:
    """Counter-based generator keyed on (recipe seed, sample seed): draws
    are order-independent across samples synthesized in parallel."""
    ss = np.random.SeedSequence(entropy=recipe.rng_seed, spawn_key=(sample_seed,))
    return np.random.Generator(np.random.Philox(ss))


def derive_timing(seq: FrameSequence, recipe: SynthesisRecipe, t_s: float) -> tuple[ExposureTiming, int, int]:
    """Resolve a sample's timing on the dense frame grid.

    Returns (timing, index of the gt frame, index of the last long frame).
    """
    i_s = seq.index_at(t_s)
    gap = recipe.resolved_gap_steps
    i_b = i_s + gap
    i_e = i_b + recipe.blur_count - 1
    if i_e >= len(seq):
        missing = i_e - (len(seq) - 1)
        raise ValueError(
            f"sequence too short for the long exposure: needs {missing} more frame(s) "
            f"past t={seq.timestamps[-1]:g}"
        )
    t_b = float(seq.timestamps[i_b])
    t_e = float(seq.timestamps[i_e])
    delta_t = recipe.delta_t_factor * (t_b - float(seq.timestamps[i_s]))
    return ExposureTiming(float(seq.timestamps[i_s]), t_b, t_e, delta_t), i_s, i_e


def make_sample(
    seq: FrameSequence,
    recipe: SynthesisRecipe,
    t_s: float,
    sample_seed: int = 0,
) -> ExposureSample:
    """Build one exposure sample around the frame at t_s.

    `seq` must already be on the dense (interpolated) grid and cover
    [t_s - delta_t, t_e]. Output is a pure function of
    (seq, recipe, sample_seed).
    """
    timing, i_s, i_e = derive_timing(seq, recipe, t_s)
    rng = sample_rng(recipe, sample_seed)
    degradation = (
        DegradationParams.sample(rng) if recipe.randomize_degradation else recipe.degradation
    )

    t_start = timing.t_s - timing.delta_t
    j0 = int(np.searchsorted(seq.timestamps, t_start + 1e-12, side="right")) - 1
    if j0 < 0:
        raise ValueError(
            f"sequence does not cover the event window: missing span "
            f"[{t_start:g}, {seq.timestamps[0]:g})"
        )

    gt = Frame(np.clip(seq.frames[i_s].pixels, 0.0, 1.0))
    short = synth_short(gt, degradation, rng)
    long_frame = synth_long(seq, timing)

    sub = FrameSequence(seq.frames[j0 : i_e + 1], seq.timestamps[j0 : i_e + 1])
    events = simulate_events(sub, recipe.simulator, rng, degradation=degradation)
    events = events.clipped(t_start, timing.t_e)

    return ExposureSample(
        short=short, long=long_frame, events=events, gt=gt, timing=timing, seed=sample_seed
    )


def recipe_to_kv(recipe: SynthesisRecipe) -> dict[str, object]:
    d = recipe.degradation
    s = recipe.simulator
    return {
        "interp_factor": recipe.interp_factor,
        "blur_count": recipe.blur_count,
        "exposure_ratio": recipe.exposure_ratio,
        "gap_steps": recipe.resolved_gap_steps,
        "delta_t_factor": recipe.delta_t_factor,
        "sample_stride": recipe.resolved_stride,
        "fps": recipe.fps,
        "randomize_degradation": recipe.randomize_degradation,
        "alpha": d.alpha,
        "beta": d.beta,
        "gamma": d.gamma,
        "sigma_p": d.sigma_p,
        "sigma_g": d.sigma_g,
        "threshold_c": s.threshold_c,
        "cutoff_hz": s.cutoff_hz,
        "noise_rate_hz": s.noise_rate_hz,
        "refractory_s": s.refractory_s,
        "rng_seed": recipe.rng_seed,
    }


def recipe_from_kv(kv: dict[str, str]) -> SynthesisRecipe:
    from .dataset_io import parse_bool

    def get(key, cast, default):
        return cast(kv[key]) if key in kv else default

    degradation = DegradationParams(
        alpha=get("alpha", float, 0.95),
        beta=get("beta", float, 0.75),
        gamma=get("gamma", float, 2.75),
        sigma_p=get("sigma_p", float, 0.075),
        sigma_g=get("sigma_g", float, 0.075),
    )
    simulator = SimulatorConfig(
        threshold_c=get("threshold_c", float, 0.2),
        cutoff_hz=get("cutoff_hz", float, 15.0),
        noise_rate_hz=get("noise_rate_hz", float, 1.0),
        refractory_s=get("refractory_s", float, 0.0),
    )
    return SynthesisRecipe(
        interp_factor=get("interp_factor", int, 7),
        blur_count=get("blur_count", int, 49),
        exposure_ratio=get("exposure_ratio", float, 7.0),
        gap_steps=get("gap_steps", int, None),
        delta_t_factor=get("delta_t_factor", float, 0.5),
        sample_stride=get("sample_stride", int, None),
        fps=get("fps", float, 24.0),
        randomize_degradation=get("randomize_degradation", parse_bool, False),
        degradation=degradation,
        simulator=simulator,
        rng_seed=get("rng_seed", int, 0),
    )
