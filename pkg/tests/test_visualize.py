import logging

import numpy as np
import pytest
from PIL import Image

from edei.core import EventStream, ExposureSample, ExposureTiming, Frame
from edei.visualize import BORDER, clip_inset, render_panel, rescale_brightness

from helpers import smooth_texture


def _sample(size=48):
    gt = Frame(smooth_texture(size, size, seed=0))
    short = Frame(np.clip(gt.pixels * 0.2, 0, 1))
    events = EventStream.empty((size, size), (0.0, 1.0))
    timing = ExposureTiming(0.0, 0.1, 0.5, 0.05)
    return ExposureSample(short=short, long=gt, events=events, gt=gt, timing=timing)


def test_rescale_brightness_targets_mean():
    dark = np.full((16, 16, 3), 0.05)
    out = rescale_brightness(dark, target_mean=0.45)
    assert np.mean(out) == pytest.approx(0.45, abs=1e-6)


def test_clip_inset_inside_passes_through():
    assert clip_inset((4, 6, 10), (48, 48)) == (4, 6, 10)


def test_clip_inset_out_of_bounds_warns(caplog):
    with caplog.at_level(logging.WARNING):
        x, y, size = clip_inset((100, 100, 12), (48, 48))
    assert (x + size, y + size) == (48, 48)
    assert any("clipped" in m for m in caplog.messages)


def test_panel_column_count_without_predictions(tmp_path):
    sample = _sample()
    out = render_panel(sample, None, tmp_path / "p.png")
    with Image.open(out) as im:
        w, _ = im.size
    # short, long, gt
    assert w == 3 * (48 + BORDER) + BORDER


def test_panel_column_count_with_predictions(tmp_path):
    sample = _sample()
    preds = {"fused": sample.gt.pixels.copy(), "enhanced": sample.gt.pixels.copy()}
    out = render_panel(sample, preds, tmp_path / "p.png")
    with Image.open(out) as im:
        w, _ = im.size
    assert w == 5 * (48 + BORDER) + BORDER


def test_panel_deterministic(tmp_path):
    sample = _sample()
    a = render_panel(sample, None, tmp_path / "a.png").read_bytes()
    b = render_panel(sample, None, tmp_path / "b.png").read_bytes()
    assert a == b
