"""Building blocks of the dual-path restoration network."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


class LayerNorm2d(nn.Module):
    """Per-position LayerNorm over the channel dimension of NCHW tensors."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x):
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        x = (x - mu) / torch.sqrt(var + 1e-6)
        return x * self.weight[None, :, None, None] + self.bias[None, :, None, None]


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(x)))


class FeatureExtractor(nn.Module):
    """Concatenate image and event grid, then a 3x3 conv and one residual block."""

    def __init__(self, image_channels: int, event_bins: int, out_channels: int):
        super().__init__()
        self.head = nn.Conv2d(image_channels + event_bins, out_channels, 3, padding=1)
        self.res = ResBlock(out_channels)

    def forward(self, image, events):
        if image.shape[-2:] != events.shape[-2:]:
            raise ValueError(
                f"image {tuple(image.shape[-2:])} and events {tuple(events.shape[-2:])} "
                "are not spatially aligned"
            )
        return self.res(self.head(torch.cat([image, events], dim=1)))


def deform_conv3x3(x, offsets, weight, bias):
    """3x3 deformable convolution with zero padding.

    `offsets` holds (dy, dx) pairs per offset group and kernel position,
    shape (B, 2*G*9, H, W). Bilinear sampling is written with explicit
    gathers so that integer offsets reproduce the plain convolution exactly
    and autograd composes from fast primitives.
    """
    b, c, h, w = x.shape
    k = 9
    g = offsets.shape[1] // (2 * k)
    cg = c // g
    off = offsets.reshape(b, g, k, 2, h, w)
    dt, dev = x.dtype, x.device
    base_y = torch.arange(h, dtype=dt, device=dev).view(1, 1, 1, h, 1)
    base_x = torch.arange(w, dtype=dt, device=dev).view(1, 1, 1, 1, w)
    ky = (torch.arange(3, dtype=dt, device=dev) - 1).repeat_interleave(3).view(1, 1, k, 1, 1)
    kx = (torch.arange(3, dtype=dt, device=dev) - 1).repeat(3).view(1, 1, k, 1, 1)
    pos_y = base_y + ky + off[:, :, :, 0]
    pos_x = base_x + kx + off[:, :, :, 1]
    y0 = pos_y.floor()
    x0 = pos_x.floor()
    fy = pos_y - y0
    fx = pos_x - x0

    flat = x.reshape(b, g, cg, h * w)
    sampled = None
    for ny, wy in ((y0, 1.0 - fy), (y0 + 1.0, fy)):
        for nx, wx in ((x0, 1.0 - fx), (x0 + 1.0, fx)):
            inside = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
            idx = (ny.clamp(0, h - 1) * w + nx.clamp(0, w - 1)).long()
            gathered = torch.gather(
                flat, 3, idx.reshape(b, g, 1, k * h * w).expand(b, g, cg, k * h * w)
            )
            weight_term = (wy * wx * inside.to(dt)).reshape(b, g, 1, k * h * w)
            term = gathered * weight_term
            sampled = term if sampled is None else sampled + term
    sampled = sampled.reshape(b, c, k, h, w).reshape(b, c * k, h, w)
    return F.conv2d(sampled, weight.reshape(weight.shape[0], c * k, 1, 1), bias)


class DeformConv3x3(nn.Module):
    """Parameter container for `deform_conv3x3` with standard conv init."""

    def __init__(self, channels: int):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(channels, channels, 3, 3))
        self.bias = nn.Parameter(torch.empty(channels))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        bound = 1.0 / math.sqrt(channels * 9)
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x, offsets):
        return deform_conv3x3(x, offsets, self.weight, self.bias)


class DeformableAlign(nn.Module):
    """Warp deblur-path features onto the enhancement-path spatial domain.

    The offset map is predicted from both paths' features; the enhancement
    features enter only through that offset prediction, never the value path.
    Offsets are clamped to a quarter of the larger spatial side.
    """

    def __init__(self, channels: int, offset_groups: int):
        super().__init__()
        self.offset_conv = nn.Conv2d(2 * channels, 2 * offset_groups * 9, 3, padding=1)
        nn.init.zeros_(self.offset_conv.weight)
        nn.init.zeros_(self.offset_conv.bias)
        self.dcn = DeformConv3x3(channels)

    def forward(self, f_long, f_short):
        offsets = self.offset_conv(torch.cat([f_long, f_short], dim=1))
        limit = math.ceil(max(f_long.shape[-2:]) / 4)
        offsets = offsets.clamp(-limit, limit)
        return self.dcn(f_long, offsets)


class ChannelCrossAttention(nn.Module):
    """Multi-head channel-wise cross attention: queries from the enhancement
    features, keys/values from the aligned deblur features."""

    def __init__(self, channels: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm_q = LayerNorm2d(channels)
        self.norm_kv = LayerNorm2d(channels)
        self.q_pw = nn.Conv2d(channels, channels, 1, bias=False)
        self.q_dw = nn.Conv2d(channels, channels, 3, padding=1, groups=channels, bias=False)
        self.kv_pw = nn.Conv2d(channels, 2 * channels, 1, bias=False)
        self.kv_dw = nn.Conv2d(2 * channels, 2 * channels, 3, padding=1, groups=2 * channels, bias=False)
        self.proj = nn.Conv2d(channels, channels, 1, bias=False)

    def _split_heads(self, x):
        b, c, h, w = x.shape
        return x.reshape(b, self.heads, c // self.heads, h * w)

    def forward(self, f_short, f_long_aligned):
        b, c, h, w = f_short.shape
        q = self._split_heads(self.q_dw(self.q_pw(self.norm_q(f_short))))
        k, v = self.kv_dw(self.kv_pw(self.norm_kv(f_long_aligned))).chunk(2, dim=1)
        k = self._split_heads(k)
        v = self._split_heads(v)
        scale = 1.0 / math.sqrt(q.shape[2])
        attn = torch.softmax(q @ k.transpose(-2, -1) * scale, dim=-1)
        out = (attn @ v).reshape(b, c, h, w)
        return self.proj(out)


class FeedForward(nn.Module):
    """Pointwise expand, 3x3 depthwise, GELU, pointwise project."""

    def __init__(self, channels: int, expansion: int):
        super().__init__()
        hidden = channels * expansion
        self.norm = LayerNorm2d(channels)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.dw = nn.Conv2d(hidden, hidden, 3, padding=1, groups=hidden)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def forward(self, x):
        return self.fc2(F.gelu(self.dw(self.fc1(self.norm(x)))))


class CrossAttentionFuse(nn.Module):
    """Residual cross attention followed by a residual feed-forward stage."""

    def __init__(self, channels: int, heads: int, expansion: int):
        super().__init__()
        self.attn = ChannelCrossAttention(channels, heads)
        self.ffn = FeedForward(channels, expansion)

    def forward(self, f_short, f_long_aligned):
        f = f_short + self.attn(f_short, f_long_aligned)
        return f + self.ffn(f)


class InteractionBlock(nn.Module):
    """One alignment + fusion stage between the two paths.

    Deformable alignment warps the deblur features; cross attention then
    injects the aligned intensity reference into the enhancement features.
    Either half can be disabled (pass-through) for ablations.
    """

    def __init__(self, channels: int, heads: int, offset_groups: int, expansion: int,
                 enable_align: bool = True, enable_fuse: bool = True):
        super().__init__()
        self.align = DeformableAlign(channels, offset_groups) if enable_align else None
        self.fuse = CrossAttentionFuse(channels, heads, expansion) if enable_fuse else None

    def forward(self, f_long, f_short):
        aligned = self.align(f_long, f_short) if self.align is not None else f_long
        fused = self.fuse(f_short, aligned) if self.fuse is not None else f_short
        return aligned, fused


class SupervisedAttention(nn.Module):
    """Gate features with a mask derived from the path's own image estimate:
    a conv maps features to an image-domain residual added to the estimate,
    a sigmoid mask from that image gates the features, residual back."""

    def __init__(self, channels: int, image_channels: int):
        super().__init__()
        self.conv_feat = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv_img = nn.Conv2d(channels, image_channels, 3, padding=1)
        self.conv_mask = nn.Conv2d(image_channels, channels, 3, padding=1)

    def forward(self, estimate, feats):
        refined = self.conv_img(feats) + estimate
        mask = torch.sigmoid(self.conv_mask(refined))
        return feats + self.conv_feat(feats) * mask


class GatedFusion(nn.Module):
    """Blend the two paths' outputs: per-path supervised attention, a sigmoid
    spatial mask from the concatenated features, then a residual conv on top
    of the enhancement estimate."""

    def __init__(self, channels: int, image_channels: int):
        super().__init__()
        self.sam_long = SupervisedAttention(channels, image_channels)
        self.sam_short = SupervisedAttention(channels, image_channels)
        self.sa_conv1 = nn.Conv2d(2 * channels, channels, 3, padding=1)
        self.sa_conv2 = nn.Conv2d(channels, 1, 3, padding=1)
        self.fuse_conv = nn.Conv2d(channels, image_channels, 3, padding=1)
        # identity at start: the fused output begins as the enhancement estimate
        nn.init.zeros_(self.fuse_conv.weight)
        nn.init.zeros_(self.fuse_conv.bias)

    def spatial_mask(self, g_long, g_short):
        return torch.sigmoid(self.sa_conv2(F.relu(self.sa_conv1(torch.cat([g_long, g_short], dim=1)))))

    def forward(self, out_long, out_short, f_long, f_short):
        g_long = self.sam_long(out_long, f_long)
        g_short = self.sam_short(out_short, f_short)
        mask = self.spatial_mask(g_long, g_short)
        blended = mask * g_short + (1.0 - mask) * g_long
        return self.fuse_conv(blended) + out_short
