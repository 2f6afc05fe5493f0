"""Side-by-side comparison panels with zoom insets and per-crop metrics."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .core import ExposureSample
from .evaluation import psnr, ssim

logger = logging.getLogger(__name__)

CAPTION_H = 26
BORDER = 4
INSET_SCALE = 3


def _to_rgb8(pixels: np.ndarray) -> np.ndarray:
    arr = np.clip(pixels, 0.0, 1.0)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return (np.round(arr * 255.0)).astype(np.uint8)


def rescale_brightness(pixels: np.ndarray, target_mean: float = 0.45) -> np.ndarray:
    """Display-only gain so dark short exposures are viewable."""
    mean = float(np.mean(pixels))
    if mean <= 1e-6:
        return pixels
    return np.clip(pixels * (target_mean / mean), 0.0, 1.0)


def clip_inset(inset: tuple[int, int, int], shape: tuple[int, int]) -> tuple[int, int, int]:
    """Clamp an (x, y, size) crop inside the image, warning when it moves."""
    h, w = shape
    x, y, size = inset
    size = max(4, min(size, h, w))
    cx = min(max(x, 0), w - size)
    cy = min(max(y, 0), h - size)
    if (cx, cy, size) != inset:
        logger.warning("inset %s outside image bounds; clipped to %s", inset, (cx, cy, size))
    return cx, cy, size


def _panel(pixels: np.ndarray, inset: tuple[int, int, int]) -> Image.Image:
    x, y, size = inset
    img = Image.fromarray(_to_rgb8(pixels))
    draw = ImageDraw.Draw(img)
    draw.rectangle([x, y, x + size - 1, y + size - 1], outline=(255, 60, 60))
    crop = img.crop((x, y, x + size, y + size))
    zoom = crop.resize((size * INSET_SCALE, size * INSET_SCALE), Image.NEAREST)
    zw, zh = zoom.size
    if zw < img.width and zh < img.height:
        img.paste(zoom, (img.width - zw, img.height - zh))
        draw.rectangle(
            [img.width - zw, img.height - zh, img.width - 1, img.height - 1],
            outline=(255, 60, 60),
        )
    return img


def render_panel(
    sample: ExposureSample,
    predictions: dict[str, np.ndarray] | None,
    out_path,
    inset: tuple[int, int, int] | None = None,
) -> Path:
    """Compose input/prediction/ground-truth columns into one image.

    Each column shows the full frame with the inset crop magnified in its
    corner; captions carry PSNR/SSIM of the inset crop against gt.
    """
    h, w = sample.gt.spatial_shape
    if inset is None:
        size = max(8, min(h, w) // 4)
        inset = ((w - size) // 2, (h - size) // 2, size)
    inset = clip_inset(inset, (h, w))
    x, y, size = inset

    panels: list[tuple[str, np.ndarray]] = [
        ("short (rescaled)", rescale_brightness(sample.short.pixels)),
        ("long", sample.long.pixels),
    ]
    for name in ("deblurred", "enhanced", "fused"):
        if predictions and name in predictions:
            panels.append((name, predictions[name]))
    panels.append(("gt", sample.gt.pixels))

    gt_crop = sample.gt.pixels[y : y + size, x : x + size]
    font = ImageFont.load_default()
    canvas = Image.new("RGB", (len(panels) * (w + BORDER) + BORDER, h + CAPTION_H + 2 * BORDER),
                       (24, 24, 24))
    draw = ImageDraw.Draw(canvas)
    for col, (name, pixels) in enumerate(panels):
        img = _panel(pixels, inset)
        ox = BORDER + col * (w + BORDER)
        canvas.paste(img, (ox, BORDER))
        if name == "gt" or name.startswith("short"):
            caption = name
        else:
            crop = pixels[y : y + size, x : x + size]
            if crop.ndim == 3 and gt_crop.shape[2] != crop.shape[2]:
                crop = crop.mean(axis=2, keepdims=True).repeat(gt_crop.shape[2], axis=2)
            if size >= 11:
                caption = f"{name}  {psnr(crop, gt_crop):.2f}dB/{ssim(crop, gt_crop):.4f}"
            else:
                caption = f"{name}  {psnr(crop, gt_crop):.2f}dB"
        draw.text((ox + 2, h + BORDER + 4), caption, fill=(235, 235, 235), font=font)

    out_path = Path(out_path)
    canvas.save(out_path)
    return out_path
