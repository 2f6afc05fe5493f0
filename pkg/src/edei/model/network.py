"""Dual-path encoder-decoder with per-scale interaction, plus a serial
two-network variant for the architecture ablation."""
from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn

from .blocks import FeatureExtractor, GatedFusion, InteractionBlock, ResBlock
from .config import ModelConfig


class ModelOutputs(NamedTuple):
    fused: torch.Tensor
    deblurred: torch.Tensor
    enhanced: torch.Tensor
    feats_long: torch.Tensor
    feats_short: torch.Tensor


class _StageBlock(nn.Module):
    """Optional channel-adjusting conv followed by residual blocks."""

    def __init__(self, in_channels: int, out_channels: int, res_blocks: int):
        super().__init__()
        self.adjust = (
            nn.Conv2d(in_channels, out_channels, 3, padding=1)
            if in_channels != out_channels
            else nn.Identity()
        )
        self.body = nn.Sequential(*[ResBlock(out_channels) for _ in range(res_blocks)])

    def forward(self, x):
        return self.body(self.adjust(x))


class _PathModules(nn.Module):
    """Encoder/decoder stack for one path (no interaction blocks)."""

    def __init__(self, cfg: ModelConfig, in_extra: int = 0):
        super().__init__()
        c = cfg.base_channels
        s = cfg.num_scales
        self.extract = FeatureExtractor(cfg.image_channels + in_extra, cfg.event_bins, c)
        self.enc = nn.ModuleList(
            [_StageBlock(cfg.channels_at(i), cfg.channels_at(i), cfg.res_blocks) for i in range(s)]
        )
        self.down = nn.ModuleList(
            [nn.Conv2d(cfg.channels_at(i), cfg.channels_at(i + 1), 3, stride=2, padding=1) for i in range(s - 1)]
        )
        self.dec = nn.ModuleList(
            [
                _StageBlock(
                    cfg.channels_at(i) if i == s - 1 else 2 * cfg.channels_at(i),
                    cfg.channels_at(i),
                    cfg.res_blocks,
                )
                for i in range(s)
            ]
        )
        self.up = nn.ModuleList(
            [nn.ConvTranspose2d(cfg.channels_at(i + 1), cfg.channels_at(i), 2, stride=2) for i in range(s - 1)]
        )
        self.head = nn.Conv2d(c, cfg.image_channels, 3, padding=1)


def _check_spatial(cfg: ModelConfig, x: torch.Tensor) -> None:
    stride = 2 ** (cfg.num_scales - 1)
    h, w = x.shape[-2:]
    if h % stride or w % stride:
        raise ValueError(f"spatial size {h}x{w} must be divisible by {stride}")


class DualExposureNet(nn.Module):
    """Two parallel encoder-decoder paths exchanging features through an
    interaction block at every encoder and decoder scale; heads predict
    residuals over their input images; a gated fusion stage blends the two
    estimates into the final output.
    """

    def __init__(
        self,
        cfg: ModelConfig,
        feed_events_deblur: bool = True,
        feed_events_enhance: bool = True,
        enable_align: bool = True,
        enable_fuse: bool = True,
    ):
        super().__init__()
        self.cfg = cfg
        self.feed_events_deblur = feed_events_deblur
        self.feed_events_enhance = feed_events_enhance
        s = cfg.num_scales

        self.path_long = _PathModules(cfg)
        self.path_short = _PathModules(cfg)

        def interaction(scale):
            return InteractionBlock(
                cfg.channels_at(scale),
                cfg.attn_heads,
                cfg.dcn_groups,
                cfg.ffn_expansion,
                enable_align=enable_align,
                enable_fuse=enable_fuse,
            )

        self.interact_enc = nn.ModuleList([interaction(i) for i in range(s)])
        self.interact_dec = nn.ModuleList([interaction(i) for i in range(s)])
        self.fusion = GatedFusion(cfg.base_channels, cfg.image_channels)

    def forward_paths(self, image_long, events_long, image_short, events_short):
        cfg = self.cfg
        _check_spatial(cfg, image_long)
        if image_long.shape != image_short.shape:
            raise ValueError("long and short images must share one shape")
        if not self.feed_events_deblur:
            events_long = torch.zeros_like(events_long)
        if not self.feed_events_enhance:
            events_short = torch.zeros_like(events_short)

        f_l = self.path_long.extract(image_long, events_long)
        f_s = self.path_short.extract(image_short, events_short)

        skips_l, skips_s = [], []
        for i in range(cfg.num_scales):
            f_l = self.path_long.enc[i](f_l)
            f_s = self.path_short.enc[i](f_s)
            f_l, f_s = self.interact_enc[i](f_l, f_s)
            if i < cfg.num_scales - 1:
                skips_l.append(f_l)
                skips_s.append(f_s)
                f_l = self.path_long.down[i](f_l)
                f_s = self.path_short.down[i](f_s)

        for i in range(cfg.num_scales - 1, -1, -1):
            f_l = self.path_long.dec[i](f_l)
            f_s = self.path_short.dec[i](f_s)
            f_l, f_s = self.interact_dec[i](f_l, f_s)
            if i > 0:
                f_l = torch.cat([self.path_long.up[i - 1](f_l), skips_l[i - 1]], dim=1)
                f_s = torch.cat([self.path_short.up[i - 1](f_s), skips_s[i - 1]], dim=1)

        out_long = image_long + self.path_long.head(f_l)
        out_short = image_short + self.path_short.head(f_s)
        return out_long, out_short, f_l, f_s

    def cgf_fuse(self, out_long, out_short, f_long, f_short):
        return self.fusion(out_long, out_short, f_long, f_short)

    def forward(self, image_long, events_long, image_short, events_short) -> ModelOutputs:
        out_long, out_short, f_l, f_s = self.forward_paths(
            image_long, events_long, image_short, events_short
        )
        fused = self.cgf_fuse(out_long, out_short, f_l, f_s)
        return ModelOutputs(fused, out_long, out_short, f_l, f_s)


class SinglePathNet(nn.Module):
    """Plain encoder-decoder used by the serial-pipeline ablation."""

    def __init__(self, cfg: ModelConfig, in_extra: int = 0):
        super().__init__()
        self.cfg = cfg
        self.path = _PathModules(cfg, in_extra=in_extra)

    def forward(self, image, events, extra=None):
        cfg = self.cfg
        _check_spatial(cfg, image)
        inp = image if extra is None else torch.cat([image, extra], dim=1)
        f = self.path.extract(inp, events)
        skips = []
        for i in range(cfg.num_scales):
            f = self.path.enc[i](f)
            if i < cfg.num_scales - 1:
                skips.append(f)
                f = self.path.down[i](f)
        for i in range(cfg.num_scales - 1, -1, -1):
            f = self.path.dec[i](f)
            if i > 0:
                f = torch.cat([self.path.up[i - 1](f), skips[i - 1]], dim=1)
        return image + self.path.head(f), f


class SerialDualExposureNet(nn.Module):
    """Serial ablation: a deblurring network feeds its estimate as the
    intensity reference to an enhancement network; the same gated fusion
    blends the two results."""

    def __init__(self, cfg: ModelConfig, feed_events_deblur: bool = True, feed_events_enhance: bool = True):
        super().__init__()
        self.cfg = cfg
        self.feed_events_deblur = feed_events_deblur
        self.feed_events_enhance = feed_events_enhance
        self.net_deblur = SinglePathNet(cfg)
        self.net_enhance = SinglePathNet(cfg, in_extra=cfg.image_channels)
        self.fusion = GatedFusion(cfg.base_channels, cfg.image_channels)

    def forward_paths(self, image_long, events_long, image_short, events_short):
        if not self.feed_events_deblur:
            events_long = torch.zeros_like(events_long)
        if not self.feed_events_enhance:
            events_short = torch.zeros_like(events_short)
        out_long, f_l = self.net_deblur(image_long, events_long)
        out_short, f_s = self.net_enhance(image_short, events_short, extra=out_long)
        return out_long, out_short, f_l, f_s

    def cgf_fuse(self, out_long, out_short, f_long, f_short):
        return self.fusion(out_long, out_short, f_long, f_short)

    def forward(self, image_long, events_long, image_short, events_short) -> ModelOutputs:
        out_long, out_short, f_l, f_s = self.forward_paths(
            image_long, events_long, image_short, events_short
        )
        fused = self.cgf_fuse(out_long, out_short, f_l, f_s)
        return ModelOutputs(fused, out_long, out_short, f_l, f_s)


def count_parameters(model_or_cfg, include_fusion: bool = True) -> int:
    """Exact trainable-parameter count; `include_fusion=False` gives the
    path-only count (everything except the final gated fusion)."""
    model = (
        DualExposureNet(model_or_cfg) if isinstance(model_or_cfg, ModelConfig) else model_or_cfg
    )
    total = sum(p.numel() for p in model.parameters() if p.requires_grad)
    if include_fusion:
        return total
    fusion = sum(p.numel() for p in model.fusion.parameters() if p.requires_grad)
    return total - fusion


def path_parameters(model) -> dict[str, torch.nn.Parameter]:
    """Named parameters outside the fusion stage (frozen in stage 2)."""
    return {n: p for n, p in model.named_parameters() if not n.startswith("fusion.")}


def fusion_parameters(model) -> dict[str, torch.nn.Parameter]:
    return {n: p for n, p in model.named_parameters() if n.startswith("fusion.")}
