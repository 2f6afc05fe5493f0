"""Loss, two-stage training schedule, checkpointing and ablation switches.

Stage 1 optimizes both paths (fused-output weight 0); stage 2 freezes every
path parameter and trains only the gated fusion. Adam with warm-restart
cosine decay, gradient-norm clipping, seeded crops and shuffling throughout.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .core import ExposureSample
from .evaluation import psnr, ssim
from .model import (
    DualExposureNet,
    ModelConfig,
    SerialDualExposureNet,
    fusion_parameters,
    path_parameters,
)
from .representation import network_inputs

CHECKPOINT_VERSION = 1
CHECKPOINT_FIELDS = ("version", "model_config", "state", "stage")


class CheckpointError(Exception):
    """Raised for unreadable or incomplete checkpoint files."""


@dataclass(frozen=True)
class AblationFlags:
    feed_events_deblur: bool = True
    feed_events_enhance: bool = True
    enable_da: bool = True
    enable_caf: bool = True
    serial_pipeline: bool = False

    def __post_init__(self):
        if self.serial_pipeline and (self.enable_da or self.enable_caf):
            raise ValueError(
                "serial_pipeline excludes the alignment/fusion flags; "
                "set enable_da=False and enable_caf=False"
            )


@dataclass(frozen=True)
class TrainConfig:
    lambdas_stage1: tuple[float, float, float] = (0.0, 1.0, 0.5)
    lambdas_stage2: tuple[float, float, float] = (1.0, 0.0, 0.0)
    lr_stage1: float = 1e-4
    lr_stage2: float = 5e-5
    epochs_stage1: int = 100
    epochs_stage2: int = 50
    batch_size: int = 8
    crop: int = 256
    restart_period: int | None = None  # cosine warm-restart period, default epochs/2
    lr_floor_factor: float = 100.0
    grad_clip: float = 1.0
    seed: int = 0
    val_interval: int = 25
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        for lam in (*self.lambdas_stage1, *self.lambdas_stage2):
            if lam < 0:
                raise ValueError("loss weights must be non-negative")

    def lambdas(self, stage: int) -> tuple[float, float, float]:
        return self.lambdas_stage1 if stage == 1 else self.lambdas_stage2

    def lr(self, stage: int) -> float:
        return self.lr_stage1 if stage == 1 else self.lr_stage2

    def epochs(self, stage: int) -> int:
        return self.epochs_stage1 if stage == 1 else self.epochs_stage2


# Keeps the overfit/acceptance experiments fast on a laptop CPU.
DESK_TRAIN = TrainConfig(
    lr_stage1=2e-3,
    lr_stage2=2e-4,
    epochs_stage1=500,
    epochs_stage2=60,
    batch_size=4,
    crop=64,
    val_interval=50,
)


def loss(fused, enhanced, deblurred, target, lambdas) -> torch.Tensor:
    """Weighted mean-absolute-error over the three outputs:
    lambdas = (fused, enhanced, deblurred) weights."""
    for t in (fused, enhanced, deblurred):
        if t.shape != target.shape:
            raise ValueError(f"prediction shape {tuple(t.shape)} != target {tuple(target.shape)}")
    l_fused, l_enh, l_deb = lambdas
    total = fused.new_zeros(())
    if l_fused:
        total = total + l_fused * (fused - target).abs().mean()
    if l_enh:
        total = total + l_enh * (enhanced - target).abs().mean()
    if l_deb:
        total = total + l_deb * (deblurred - target).abs().mean()
    return total


def apply_ablation(cfg: ModelConfig, flags: AblationFlags) -> torch.nn.Module:
    """Build the model variant selected by the ablation flags."""
    if flags.serial_pipeline:
        return SerialDualExposureNet(
            cfg,
            feed_events_deblur=flags.feed_events_deblur,
            feed_events_enhance=flags.feed_events_enhance,
        )
    return DualExposureNet(
        cfg,
        feed_events_deblur=flags.feed_events_deblur,
        feed_events_enhance=flags.feed_events_enhance,
        enable_align=flags.enable_da,
        enable_fuse=flags.enable_caf,
    )


def build_model(cfg: ModelConfig, flags: AblationFlags | None = None) -> torch.nn.Module:
    return apply_ablation(cfg, flags or AblationFlags())


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, model_cfg: ModelConfig, stage: int, extra: Mapping | None = None) -> None:
    """Atomic write (temp file + rename)."""
    path = Path(path)
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model_cfg.to_dict(),
        "state": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "stage": stage,
    }
    if extra:
        payload["extra"] = dict(extra)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict):
        raise CheckpointError(f"checkpoint {path} is not a mapping")
    for key in CHECKPOINT_FIELDS:
        if key not in payload:
            raise CheckpointError(f"checkpoint {path} missing field {key!r}")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint {path} has unsupported version {payload['version']}")
    return payload


def model_from_checkpoint(payload: dict, flags: AblationFlags | None = None) -> tuple[torch.nn.Module, ModelConfig]:
    cfg = ModelConfig.from_dict(payload["model_config"])
    flags = flags or AblationFlags(**payload.get("extra", {}).get("ablation", {}))
    model = build_model(cfg, flags)
    try:
        model.load_state_dict(payload["state"])
    except RuntimeError as e:
        raise CheckpointError(f"state does not match the model config: {e}") from e
    return model, cfg


# ---------------------------------------------------------------------------
# data plumbing


def prepare_inputs(samples: Sequence[ExposureSample], bins: int) -> list[dict[str, np.ndarray]]:
    return [network_inputs(s, bins) for s in samples]


def _crop(arrays: dict[str, np.ndarray], crop: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    h, w = arrays["target"].shape[-2:]
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} exceeds sample size {h}x{w}")
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    return {k: v[:, y0 : y0 + crop, x0 : x0 + crop] for k, v in arrays.items()}


def _batch(items: list[dict[str, np.ndarray]], device) -> dict[str, torch.Tensor]:
    return {
        k: torch.from_numpy(np.stack([it[k] for it in items])).to(device)
        for k in items[0]
    }


def forward_batch(model, batch: Mapping[str, torch.Tensor]):
    return model(
        batch["image_long"], batch["events_long"], batch["image_short"], batch["events_short"]
    )


@torch.no_grad()
def predict_sample(model, sample: ExposureSample, bins: int, deblur_window=None, enhance_window=None):
    """Run a frozen model on one sample at full resolution."""
    arrays = network_inputs(sample, bins, deblur_window=deblur_window, enhance_window=enhance_window)
    batch = {k: torch.from_numpy(v[None]) for k, v in arrays.items()}
    model.eval()
    out = forward_batch(model, batch)
    to_frame = lambda t: np.clip(t[0].numpy().transpose(1, 2, 0).astype(np.float64), 0.0, 1.0)
    return {
        "fused": to_frame(out.fused),
        "deblurred": to_frame(out.deblurred),
        "enhanced": to_frame(out.enhanced),
    }


# ---------------------------------------------------------------------------
# training loop


def train_stage(
    model: torch.nn.Module,
    data: Sequence[ExposureSample],
    cfg: TrainConfig,
    stage: int,
    stage1_state: Mapping[str, torch.Tensor] | None = None,
    out_dir=None,
    model_cfg: ModelConfig | None = None,
) -> tuple[torch.nn.Module, list[dict]]:
    """Run one training stage; returns the model and per-epoch metric records.

    Stage 2 requires the stage-1 state (a checkpoint payload's ``state`` or a
    state dict); it freezes every path parameter and trains only the fusion.
    When `out_dir` is given, a checkpoint and line-delimited metrics are
    written there.
    """
    if stage not in (1, 2):
        raise ValueError("stage must be 1 or 2")
    if stage == 2:
        if stage1_state is None:
            raise CheckpointError("stage 2 requires a stage-1 checkpoint")
        model.load_state_dict(dict(stage1_state))
    if not data:
        raise ValueError("no training samples")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    device = torch.device("cpu")
    model.to(device).train()

    if stage == 1:
        trainable = list(path_parameters(model).values())
        for p in fusion_parameters(model).values():
            p.requires_grad_(False)
    else:
        for p in path_parameters(model).values():
            p.requires_grad_(False)
        trainable = list(fusion_parameters(model).values())
        for p in trainable:
            p.requires_grad_(True)

    lr = cfg.lr(stage)
    epochs = cfg.epochs(stage)
    optimizer = torch.optim.Adam(trainable, lr=lr, betas=(0.9, 0.999))
    period = cfg.restart_period or max(1, epochs // 2)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingWarmRestarts(
        optimizer, T_0=period, eta_min=lr / cfg.lr_floor_factor
    )
    lambdas = cfg.lambdas(stage)
    bins = model.cfg.event_bins
    inputs = prepare_inputs(data, bins)

    metrics: list[dict] = []
    last_val = (float("nan"), float("nan"))
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(inputs))
        epoch_loss = 0.0
        steps = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = _batch([_crop(inputs[i], cfg.crop, rng) for i in idx], device)
            out = forward_batch(model, batch)
            step_loss = loss(out.fused, out.enhanced, out.deblurred, batch["target"], lambdas)
            optimizer.zero_grad()
            step_loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(trainable, cfg.grad_clip)
            optimizer.step()
            epoch_loss += float(step_loss.detach())
            steps += 1

        if epoch == 1 or epoch == epochs or epoch % cfg.val_interval == 0:
            last_val = _validate(model, data, bins, stage)
        record = {
            "epoch": epoch,
            "stage": stage,
            "loss": epoch_loss / max(1, steps),
            "val_psnr": last_val[0],
            "val_ssim": last_val[1],
            "lr": scheduler.get_last_lr()[0],
        }
        metrics.append(record)
        scheduler.step()

    model.eval()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        mcfg = model_cfg or model.cfg
        # the flags shape the architecture, so reloading needs them
        extra = {"ablation": asdict(cfg.ablation)}
        save_checkpoint(out_dir / f"stage{stage}.ckpt", model, mcfg, stage, extra=extra)
        with open(out_dir / f"metrics_stage{stage}.jsonl", "w") as f:
            for record in metrics:
                f.write(json.dumps(record) + "\n")
    return model, metrics


@torch.no_grad()
def _validate(model, data, bins, stage) -> tuple[float, float]:
    """Mean PSNR/SSIM of the stage's supervised output over the samples."""
    was_training = model.training
    model.eval()
    key = "fused" if stage == 2 else "enhanced"
    psnrs, ssims = [], []
    for sample in data:
        pred = predict_sample(model, sample, bins)[key]
        psnrs.append(psnr(pred, sample.gt.pixels))
        ssims.append(ssim(pred, sample.gt.pixels))
    if was_training:
        model.train()
    return float(np.mean(psnrs)), float(np.mean(ssims))


@torch.no_grad()
def evaluate_paths(model, samples: Sequence[ExposureSample]) -> dict[str, float]:
    """Mean PSNR of each output head over the samples."""
    bins = model.cfg.event_bins
    sums = {"fused": 0.0, "deblurred": 0.0, "enhanced": 0.0}
    for sample in samples:
        preds = predict_sample(model, sample, bins)
        for key in sums:
            sums[key] += psnr(preds[key], sample.gt.pixels)
    return {k: v / len(samples) for k, v in sums.items()}


def sweep_lambda3(
    model_cfg: ModelConfig,
    samples: Sequence[ExposureSample],
    cfg: TrainConfig,
    lambda3_values: Sequence[float] = tuple(round(0.1 * i, 1) for i in range(11)),
) -> list[dict]:
    """Stage-1 runs over the deblur-loss weight; logs both paths' PSNR.

    Raw values only; at this scale the curve is indicative, not conclusive.
    """
    rows = []
    for lam3 in lambda3_values:
        run_cfg = replace(cfg, lambdas_stage1=(0.0, 1.0, float(lam3)))
        torch.manual_seed(run_cfg.seed)
        model = build_model(model_cfg, run_cfg.ablation)
        model, _ = train_stage(model, samples, run_cfg, stage=1)
        scores = evaluate_paths(model, samples)
        rows.append(
            {
                "lambda3": float(lam3),
                "psnr_enhanced": scores["enhanced"],
                "psnr_deblurred": scores["deblurred"],
            }
        )
    return rows
