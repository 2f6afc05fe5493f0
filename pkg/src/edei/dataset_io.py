"""On-disk dataset layout and codecs.

Layout: ``<root>/<sequence>/<index>/{short.img, long.img, gt.img,
events.evt, meta.cfg}``.

``.img`` is a tiny lossless container with 16-bit channels:
header ``magic "EIMG", version u16, H u16, W u16, C u16, reserved u32``
(16 bytes) followed by row-major little-endian u16 samples scaled so
65535 == 1.0.

``.evt`` stores packed little-endian records ``(t_us u64, x u16, y u16,
p i8, pad i8)`` after the header ``magic "EDEI", version u16, H u16,
W u16, reserved u32, count u64``.

``meta.cfg`` is a flat key=value text file carrying the exposure timing
and the synthesis parameters. Floats are written with repr() so a
write/read cycle is value-exact.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .core import EventStream, ExposureSample, ExposureTiming, Frame

IMG_MAGIC = b"EIMG"
IMG_VERSION = 1
_IMG_HEADER = struct.Struct("<4sHHHHI")

EVT_MAGIC = b"EDEI"
EVT_VERSION = 1
_EVT_HEADER = struct.Struct("<4sHHHIQ")
_EVT_RECORD = np.dtype([("t_us", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "i1")])

SAMPLE_FILES = ("short.img", "long.img", "gt.img", "events.evt", "meta.cfg")


class DatasetError(Exception):
    """Raised for malformed dataset files or directories."""


# ---------------------------------------------------------------------------
# flat key=value config files


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_kv(path, mapping: Mapping[str, object]) -> None:
    lines = [f"{k}={format_value(v)}" for k, v in mapping.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise DatasetError(f"not a boolean: {s!r}")


# ---------------------------------------------------------------------------
# .img codec


def write_image(path, frame: Frame) -> None:
    """Persist a frame, clamped to [0,1] and quantized to 16 bits."""
    pixels = np.clip(frame.pixels, 0.0, 1.0)
    q = np.round(pixels * 65535.0).astype("<u2")
    h, w, c = q.shape
    with open(path, "wb") as f:
        f.write(_IMG_HEADER.pack(IMG_MAGIC, IMG_VERSION, h, w, c, 0))
        f.write(q.tobytes())


def read_image(path) -> Frame:
    raw = Path(path).read_bytes()
    if len(raw) < _IMG_HEADER.size:
        raise DatasetError(f"{path}: truncated image header")
    magic, version, h, w, c, _ = _IMG_HEADER.unpack_from(raw)
    if magic != IMG_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != IMG_VERSION:
        raise DatasetError(f"{path}: unsupported image version {version}")
    expected = _IMG_HEADER.size + h * w * c * 2
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, got {len(raw)}")
    q = np.frombuffer(raw, dtype="<u2", offset=_IMG_HEADER.size).reshape(h, w, c)
    return Frame(q.astype(np.float64) / 65535.0)


# ---------------------------------------------------------------------------
# .evt codec


def seconds_to_us(t: np.ndarray) -> np.ndarray:
    return np.round(np.asarray(t, dtype=np.float64) * 1e6).astype(np.int64)


def us_to_seconds(t_us: np.ndarray) -> np.ndarray:
    return np.asarray(t_us, dtype=np.float64) / 1e6


def write_events(path, stream: EventStream) -> None:
    t_us = seconds_to_us(stream.t)
    if len(t_us) and t_us.min() < 0:
        raise DatasetError("event timestamps must be non-negative for storage")
    rec = np.zeros(len(stream), dtype=_EVT_RECORD)
    rec["t_us"] = t_us.astype(np.uint64)
    rec["x"] = stream.x.astype(np.uint16)
    rec["y"] = stream.y.astype(np.uint16)
    rec["p"] = stream.p
    h, w = stream.sensor_shape
    with open(path, "wb") as f:
        f.write(_EVT_HEADER.pack(EVT_MAGIC, EVT_VERSION, h, w, 0, len(rec)))
        f.write(rec.tobytes())


def read_events(path, t_span: tuple[float, float] | None = None) -> EventStream:
    raw = Path(path).read_bytes()
    if len(raw) < _EVT_HEADER.size:
        raise DatasetError(f"{path}: truncated event header")
    magic, version, h, w, _, count = _EVT_HEADER.unpack_from(raw)
    if magic != EVT_MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != EVT_VERSION:
        raise DatasetError(f"{path}: unsupported event version {version}")
    expected = _EVT_HEADER.size + count * _EVT_RECORD.itemsize
    if len(raw) != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, got {len(raw)}")
    rec = np.frombuffer(raw, dtype=_EVT_RECORD, offset=_EVT_HEADER.size)
    t = us_to_seconds(rec["t_us"])
    if t_span is None:
        t_span = (float(t[0]), float(t[-1])) if count else (0.0, 0.0)
    return EventStream(t, rec["x"], rec["y"], rec["p"].astype(np.int8), (h, w), t_span)


# ---------------------------------------------------------------------------
# sample directories


def timing_to_kv(timing: ExposureTiming) -> dict[str, object]:
    return {
        "t_s": timing.t_s,
        "t_b": timing.t_b,
        "t_e": timing.t_e,
        "delta_t": timing.delta_t,
    }


def save_sample(directory, sample: ExposureSample, extra: Mapping[str, object] | None = None) -> Path:
    """Write one sample directory; returns its path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_image(directory / "short.img", sample.short)
    write_image(directory / "long.img", sample.long)
    write_image(directory / "gt.img", sample.gt)
    write_events(directory / "events.evt", sample.events)
    meta: dict[str, object] = {"schema_version": 1}
    meta.update(timing_to_kv(sample.timing))
    meta["seed"] = sample.seed
    meta["events_t_start"] = sample.events.t_span[0]
    meta["events_t_end"] = sample.events.t_span[1]
    if extra:
        meta.update(extra)
    write_kv(directory / "meta.cfg", meta)
    return directory


def load_sample(directory, require_gt: bool = True) -> ExposureSample:
    """Read one sample directory.

    With ``require_gt=False`` a missing gt.img is tolerated (inference on
    reference-free captures); the short frame stands in so shapes stay
    consistent, and the caller must not read gt values.
    """
    directory = Path(directory)
    for name in SAMPLE_FILES:
        if name == "gt.img" and not require_gt:
            continue
        if not (directory / name).exists():
            raise DatasetError(f"{directory}: missing {name}")
    meta = read_kv(directory / "meta.cfg")
    try:
        timing = ExposureTiming(
            t_s=float(meta["t_s"]),
            t_b=float(meta["t_b"]),
            t_e=float(meta["t_e"]),
            delta_t=float(meta["delta_t"]),
        )
        span = (float(meta["events_t_start"]), float(meta["events_t_end"]))
        seed = int(meta.get("seed", 0))
    except KeyError as e:
        raise DatasetError(f"{directory}/meta.cfg: missing key {e.args[0]!r}") from None
    short = read_image(directory / "short.img")
    gt_path = directory / "gt.img"
    return ExposureSample(
        short=short,
        long=read_image(directory / "long.img"),
        gt=read_image(gt_path) if gt_path.exists() else short,
        events=read_events(directory / "events.evt", t_span=span),
        timing=timing,
        seed=seed,
    )


def iter_sample_dirs(root) -> Iterator[tuple[str, str, Path]]:
    """Yield (sequence, index, path) for every sample directory under root."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root not found: {root}")
    for seq_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for idx_dir in sorted(p for p in seq_dir.iterdir() if p.is_dir()):
            if (idx_dir / "meta.cfg").exists():
                yield seq_dir.name, idx_dir.name, idx_dir


def load_dataset(root) -> list[tuple[str, str, ExposureSample]]:
    out = [(seq, idx, load_sample(path)) for seq, idx, path in iter_sample_dirs(root)]
    if not out:
        raise DatasetError(f"no samples found under {root}")
    return out
