import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from edei.model.blocks import (
    ChannelCrossAttention,
    CrossAttentionFuse,
    DeformableAlign,
    FeatureExtractor,
    GatedFusion,
    LayerNorm2d,
    deform_conv3x3,
)

torch.manual_seed(0)


def _zero_biases(module):
    for m in module.modules():
        if getattr(m, "bias", None) is not None:
            torch.nn.init.zeros_(m.bias)


# ---------------------------------------------------------------------------
# feature extraction


def test_extract_features_zero_inputs_zero_biases():
    fe = FeatureExtractor(3, 6, 32)
    _zero_biases(fe)
    out = fe(torch.zeros(1, 3, 16, 16), torch.zeros(1, 6, 16, 16))
    assert torch.all(out == 0)


def test_extract_features_output_shape():
    fe = FeatureExtractor(3, 6, 32)
    out = fe(torch.rand(1, 3, 64, 64), torch.rand(1, 6, 64, 64))
    assert out.shape == (1, 32, 64, 64)


def test_extract_features_spatial_mismatch_errors():
    fe = FeatureExtractor(3, 6, 8)
    with pytest.raises(ValueError, match="aligned"):
        fe(torch.rand(1, 3, 16, 16), torch.rand(1, 6, 8, 8))


def test_extract_features_input_gradient_finite_differences():
    torch.manual_seed(3)
    fe = FeatureExtractor(3, 2, 4).double()
    image = torch.rand(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
    events = torch.rand(1, 2, 8, 8, dtype=torch.float64)
    fe(image, events).sum().backward()
    analytic = image.grad.clone()

    rng = np.random.default_rng(0)
    flat = image.detach().clone().reshape(-1)
    h = 1e-6
    for idx in rng.choice(flat.numel(), size=40, replace=False):
        for sign, store in ((1, "hi"), (-1, "lo")):
            probe = flat.clone()
            probe[idx] += sign * h
            val = fe(probe.reshape(image.shape), events).sum().item()
            if sign == 1:
                hi = val
            else:
                lo = val
        fd = (hi - lo) / (2 * h)
        an = analytic.reshape(-1)[idx].item()
        assert abs(fd - an) / max(abs(fd), abs(an), 1e-8) < 1e-3


# ---------------------------------------------------------------------------
# deformable alignment


def test_deform_conv_zero_offset_equals_standard_conv():
    torch.manual_seed(1)
    x = torch.randn(2, 8, 16, 16, dtype=torch.float64)
    w = torch.randn(8, 8, 3, 3, dtype=torch.float64)
    b = torch.randn(8, dtype=torch.float64)
    off = torch.zeros(2, 2 * 9, 16, 16, dtype=torch.float64)
    got = deform_conv3x3(x, off, w, b)
    ref = F.conv2d(x, w, b, padding=1)
    assert (got - ref).abs().max().item() < 1e-5


def test_deform_conv_matches_torchvision_oracle():
    torchvision_ops = pytest.importorskip("torchvision.ops")
    torch.manual_seed(2)
    for groups in (1, 2, 4):
        x = torch.randn(2, 8, 12, 12, dtype=torch.float64)
        w = torch.randn(8, 8, 3, 3, dtype=torch.float64)
        b = torch.randn(8, dtype=torch.float64)
        off = 3.0 * torch.randn(2, 2 * groups * 9, 12, 12, dtype=torch.float64)
        got = deform_conv3x3(x, off, w, b)
        ref = torchvision_ops.deform_conv2d(x, off, w, b, padding=(1, 1))
        assert (got - ref).abs().max().item() < 1e-10


def test_deform_conv_integer_offset_shifts_interior():
    # identity kernel + (dy, dx) = (+1, 0) everywhere: output row y reads
    # input row y+1 in the interior
    c = 4
    x = torch.randn(1, c, 10, 10, dtype=torch.float64)
    w = torch.zeros(c, c, 3, 3, dtype=torch.float64)
    for i in range(c):
        w[i, i, 1, 1] = 1.0
    b = torch.zeros(c, dtype=torch.float64)
    off = torch.zeros(1, 2 * 9, 10, 10, dtype=torch.float64)
    off[:, 0::2] = 1.0  # dy components
    out = deform_conv3x3(x, off, w, b)
    assert torch.allclose(out[:, :, :-1, :], x[:, :, 1:, :])


def test_deformable_align_zero_init_passes_through_conv():
    # the offset conv starts at zero, so a fresh block is a plain conv of f_long
    torch.manual_seed(4)
    block = DeformableAlign(8, 2).double()
    f_l = torch.randn(1, 8, 12, 12, dtype=torch.float64)
    f_s = torch.randn(1, 8, 12, 12, dtype=torch.float64)
    out = block(f_l, f_s)
    ref = F.conv2d(f_l, block.dcn.weight, block.dcn.bias, padding=1)
    assert (out - ref).abs().max().item() < 1e-5


def test_deformable_align_shape_contract():
    block = DeformableAlign(32, 8)
    out = block(torch.rand(1, 32, 64, 64), torch.rand(1, 32, 64, 64))
    assert out.shape == (1, 32, 64, 64)


def test_deformable_align_offsets_clamped():
    block = DeformableAlign(4, 1)
    torch.nn.init.constant_(block.offset_conv.bias, 1e6)
    f = torch.rand(1, 4, 16, 16)
    out = block(f, f)
    assert torch.isfinite(out).all()  # huge offsets clamped to ~H/4, not NaN/overflow


# ---------------------------------------------------------------------------
# cross-attention fusion


def test_attention_softmax_rows_sum_to_one():
    torch.manual_seed(5)
    attn = ChannelCrossAttention(16, 4)
    f_s = torch.randn(2, 16, 12, 12)
    f_l = torch.randn(2, 16, 12, 12)
    q = attn._split_heads(attn.q_dw(attn.q_pw(attn.norm_q(f_s))))
    k, v = attn.kv_dw(attn.kv_pw(attn.norm_kv(f_l))).chunk(2, dim=1)
    k = attn._split_heads(k)
    rows = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[2]), dim=-1)
    assert (rows.sum(dim=-1) - 1.0).abs().max().item() < 1e-6


def test_caf_zero_reference_reduces_to_ffn_residual():
    torch.manual_seed(6)
    caf = CrossAttentionFuse(8, 2, 2)
    f_s = torch.randn(1, 8, 10, 10)
    out = caf(f_s, torch.zeros_like(f_s))
    expected = f_s + caf.ffn(f_s)
    assert torch.allclose(out, expected, atol=1e-7)


def test_single_head_attention_matches_direct_computation():
    torch.manual_seed(7)
    attn = ChannelCrossAttention(8, 1).double()
    f_s = torch.randn(1, 8, 9, 9, dtype=torch.float64)
    f_l = torch.randn(1, 8, 9, 9, dtype=torch.float64)
    got = attn(f_s, f_l)

    # direct single-head computation from the module's own projections
    q = attn.q_dw(attn.q_pw(attn.norm_q(f_s)))[0].reshape(8, -1)
    k, v = attn.kv_dw(attn.kv_pw(attn.norm_kv(f_l))).chunk(2, dim=1)
    k = k[0].reshape(8, -1)
    v = v[0].reshape(8, -1)
    a = torch.softmax(q @ k.T / math.sqrt(8.0), dim=-1)
    direct = attn.proj((a @ v).reshape(1, 8, 9, 9))
    assert torch.allclose(got, direct, atol=1e-12)


def test_multi_head_changes_result():
    torch.manual_seed(8)
    f_s = torch.randn(1, 8, 9, 9)
    f_l = torch.randn(1, 8, 9, 9)
    a1 = ChannelCrossAttention(8, 1)
    a2 = ChannelCrossAttention(8, 4)
    a2.load_state_dict(a1.state_dict())
    assert not torch.allclose(a1(f_s, f_l), a2(f_s, f_l))


# ---------------------------------------------------------------------------
# gated fusion


def _fusion_inputs(c=8, size=12):
    torch.manual_seed(9)
    return (
        torch.rand(1, 3, size, size),
        torch.rand(1, 3, size, size),
        torch.randn(1, c, size, size),
        torch.randn(1, c, size, size),
    )


def test_fusion_mask_in_open_unit_interval():
    fusion = GatedFusion(8, 3)
    out_l, out_s, f_l, f_s = _fusion_inputs()
    mask = fusion.spatial_mask(fusion.sam_long(out_l, f_l), fusion.sam_short(out_s, f_s))
    assert mask.min().item() > 0.0 and mask.max().item() < 1.0


def test_fusion_zero_init_returns_enhanced_estimate():
    fusion = GatedFusion(8, 3)  # fuse_conv is zero-initialized
    out_l, out_s, f_l, f_s = _fusion_inputs()
    fused = fusion(out_l, out_s, f_l, f_s)
    assert torch.equal(fused, out_s)


def test_fusion_saturated_mask_selects_enhancement_branch():
    torch.manual_seed(10)
    fusion = GatedFusion(8, 3)
    torch.nn.init.normal_(fusion.fuse_conv.weight, std=0.1)
    torch.nn.init.normal_(fusion.fuse_conv.bias, std=0.1)
    # saturate the mask: sigmoid(100) == 1.0 in float32
    torch.nn.init.zeros_(fusion.sa_conv2.weight)
    torch.nn.init.constant_(fusion.sa_conv2.bias, 100.0)
    out_l, out_s, f_l, f_s = _fusion_inputs()
    fused = fusion(out_l, out_s, f_l, f_s)
    expected = fusion.fuse_conv(fusion.sam_short(out_s, f_s)) + out_s
    assert torch.equal(fused, expected)


def test_layernorm2d_normalizes_channels():
    torch.manual_seed(11)
    ln = LayerNorm2d(16)
    x = torch.randn(2, 16, 6, 6) * 3 + 1
    y = ln(x)
    assert y.mean(dim=1).abs().max().item() < 1e-5
    assert (y.var(dim=1, unbiased=False) - 1.0).abs().max().item() < 1e-3
