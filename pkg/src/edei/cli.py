"""Command-line entry point: synth, train, eval, infer, stats, viz.

Config files are flat key=value text; any key can be overridden with
repeated ``--set key=value`` flags. Every run honors ``--seed``, supports
``--dry-run`` (validate + print the plan, write nothing) and records one
manifest describing what ran.

Exit codes: 0 success, 2 config error, 3 data error, 4 checkpoint error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .core import Frame, FrameSequence, validate_sample
from .dataset_io import (
    DatasetError,
    load_dataset,
    load_sample,
    parse_bool,
    read_kv,
    save_sample,
)
from .synthesis import SynthesisRecipe, interpolate, make_sample, recipe_from_kv, recipe_to_kv

logger = logging.getLogger("edei")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_CHECKPOINT = 4

FRAME_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".img")


class ConfigError(Exception):
    """Raised for unusable configs or flag combinations."""


# ---------------------------------------------------------------------------
# config plumbing


def _parse_set_overrides(pairs: list[str] | None) -> dict[str, str]:
    out: dict[str, str] = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load_config(path: str | None, overrides: dict[str, str]) -> dict[str, str]:
    cfg: dict[str, str] = {}
    if path:
        try:
            cfg.update(read_kv(path))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except DatasetError as e:
            raise ConfigError(str(e)) from None
    cfg.update(overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()[:16]


def hash_tree(root) -> str:
    """Content hash over every file under root (sorted relative paths)."""
    root = Path(root)
    digest = hashlib.sha256()
    if root.is_file():
        digest.update(root.read_bytes())
        return digest.hexdigest()[:16]
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()[:16]


def write_manifest(out_dir, command: str, cfg: dict, seed: int, dataset_hash: str,
                   outputs: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "dataset_hash": dataset_hash,
        "code_version": __version__,
        "wall_clock_s": round(time.time() - started, 3),
        "outputs": outputs,
    }
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


# ---------------------------------------------------------------------------
# frame-directory ingestion


def _read_frame_file(path: Path) -> Frame:
    if path.suffix == ".img":
        from .dataset_io import read_image

        return read_image(path)
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Frame(arr)


def load_frames_dir(path, fps: float) -> FrameSequence:
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"frames directory not found: {path}")
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in FRAME_EXTENSIONS)
    if len(files) < 2:
        raise DatasetError(f"{path}: need at least two frames, found {len(files)}")
    frames = [_read_frame_file(p) for p in files]
    times = np.arange(len(frames), dtype=np.float64) / fps
    return FrameSequence(frames, times)


def dense_sequence(seq: FrameSequence, recipe: SynthesisRecipe, cache_key: str | None) -> FrameSequence:
    """Interpolate to the dense grid, caching under EDEI_CACHE when set."""
    cache_root = os.environ.get("EDEI_CACHE")
    if cache_root and cache_key:
        cache_path = Path(cache_root) / f"interp_{cache_key}_{recipe.interp_factor}.npz"
        if cache_path.exists():
            data = np.load(cache_path)
            frames = [Frame(f) for f in data["frames"]]
            return FrameSequence(frames, data["timestamps"])
    dense = interpolate(seq, recipe.interp_factor)
    if cache_root and cache_key:
        Path(cache_root).mkdir(parents=True, exist_ok=True)
        stack = np.stack([f.pixels for f in dense.frames])
        np.savez(Path(cache_root) / f"interp_{cache_key}_{recipe.interp_factor}.npz",
                 frames=stack, timestamps=dense.timestamps)
    return dense


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    started = time.time()
    overrides = _parse_set_overrides(args.set)
    kv = _load_config(args.recipe, overrides)
    try:
        recipe = recipe_from_kv(kv)
    except (ValueError, DatasetError) as e:
        raise ConfigError(f"bad recipe: {e}") from None
    if args.seed is not None:
        recipe = replace(recipe, rng_seed=args.seed)

    seq = load_frames_dir(args.input, recipe.fps)
    seq_name = args.sequence or Path(args.input).name
    dense = dense_sequence(seq, recipe, cache_key=hash_tree(args.input))

    stride = recipe.resolved_stride
    first = recipe.resolved_gap_steps  # leaves room for t_s - delta_t
    positions = list(range(first, len(dense) - recipe.resolved_gap_steps - recipe.blur_count, stride))
    if args.count:
        positions = positions[: args.count]
    if not positions:
        raise DatasetError("sequence too short for even one sample with this recipe")

    plan = f"synth: {len(positions)} sample(s) from {len(seq)} frames -> {args.out}/{seq_name}"
    if args.dry_run:
        print(plan)
        return EXIT_OK
    logger.info(plan)

    outputs = []
    for i, pos in enumerate(positions):
        sample = make_sample(dense, recipe, float(dense.timestamps[pos]), sample_seed=i)
        violations = validate_sample(sample)
        if violations:
            raise DatasetError(f"sample {i} failed validation: {violations}")
        out_dir = Path(args.out) / seq_name / f"{i:05d}"
        save_sample(out_dir, sample, extra=recipe_to_kv(recipe))
        outputs.append(str(out_dir))
    write_manifest(args.out, "synth", kv, recipe.rng_seed, hash_tree(args.input), outputs, started)
    print(f"wrote {len(outputs)} samples under {args.out}/{seq_name}")
    return EXIT_OK


def _train_configs(kv: dict[str, str], seed: int | None):
    from .model import ModelConfig
    from .training import AblationFlags, TrainConfig

    def pick(prefix: str) -> dict[str, str]:
        return {k[len(prefix):]: v for k, v in kv.items() if k.startswith(prefix)}

    try:
        model_kw = {k: int(v) for k, v in pick("model.").items()}
        model_cfg = ModelConfig(**model_kw) if model_kw else ModelConfig()
        flags_kw = {k: parse_bool(v) for k, v in pick("ablation.").items()}
        flags = AblationFlags(**flags_kw)
        train_kw: dict = {}
        casts = {
            "lr_stage1": float, "lr_stage2": float, "epochs_stage1": int, "epochs_stage2": int,
            "batch_size": int, "crop": int, "restart_period": int, "lr_floor_factor": float,
            "grad_clip": float, "val_interval": int,
        }
        for key, value in pick("train.").items():
            if key in ("lambdas_stage1", "lambdas_stage2"):
                train_kw[key] = tuple(float(x) for x in value.split(","))
            elif key in casts:
                train_kw[key] = casts[key](value)
            else:
                raise ConfigError(f"unknown train config key: train.{key}")
        train_cfg = TrainConfig(ablation=flags, seed=seed if seed is not None else 0, **train_kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad training config: {e}") from None
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    import torch

    from .training import build_model, load_checkpoint, train_stage

    started = time.time()
    kv = _load_config(args.config, _parse_set_overrides(args.set))
    model_cfg, train_cfg = _train_configs(kv, args.seed)

    if args.stage == 2 and not args.ckpt:
        raise ConfigError("stage 2 requires --ckpt with the stage-1 checkpoint")
    samples = [s for _, _, s in load_dataset(args.data)]
    plan = (
        f"train stage {args.stage}: {len(samples)} samples, "
        f"{train_cfg.epochs(args.stage)} epochs, lr {train_cfg.lr(args.stage):g} -> {args.out}"
    )
    if args.dry_run:
        print(plan)
        return EXIT_OK
    logger.info(plan)

    torch.manual_seed(train_cfg.seed)
    model = build_model(model_cfg, train_cfg.ablation)
    stage1_state = None
    if args.stage == 2:
        payload = load_checkpoint(args.ckpt)
        stage1_state = payload["state"]

    _, metrics = train_stage(
        model, samples, train_cfg, args.stage,
        stage1_state=stage1_state, out_dir=args.out, model_cfg=model_cfg,
    )
    write_manifest(args.out, "train", kv, train_cfg.seed, hash_tree(args.data),
                   [str(Path(args.out) / f"stage{args.stage}.ckpt")], started)
    final = metrics[-1]
    print(f"stage {args.stage} done: loss {final['loss']:.5f}, val PSNR {final['val_psnr']:.2f} dB")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate_model, sweep_ratio, sweep_temporal
    from .training import load_checkpoint, model_from_checkpoint

    started = time.time()
    payload = load_checkpoint(args.ckpt)
    model, _ = model_from_checkpoint(payload)
    samples = [s for _, _, s in load_dataset(args.data)]

    plan = f"eval: {len(samples)} samples, sweep={args.sweep or 'none'} -> {args.out}"
    if args.dry_run:
        print(plan)
        return EXIT_OK

    rows: list[dict]
    if args.sweep == "temporal":
        rows = sweep_temporal(model, samples)
    elif args.sweep == "ratio":
        if not args.frames:
            raise ConfigError("--sweep ratio requires --frames (the sharp source clip)")
        kv = _load_config(args.recipe, _parse_set_overrides(args.set))
        try:
            recipe = recipe_from_kv(kv)
        except (ValueError, DatasetError) as e:
            raise ConfigError(f"bad recipe: {e}") from None
        seq = load_frames_dir(args.frames, recipe.fps)
        dense = dense_sequence(seq, recipe, cache_key=hash_tree(args.frames))
        t_s_list = [s.timing.t_s for s in samples]
        rows = sweep_ratio(model, dense, recipe, t_s_list)
    else:
        report = evaluate_model(model, samples)
        rows = [
            {"sample": i, "psnr": p, "ssim": s} for i, (p, s) in enumerate(report.per_sample)
        ]
        rows.append({"sample": "mean", "psnr": report.psnr_db, "ssim": report.ssim})

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    for row in rows:
        print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    write_manifest(out.parent, "eval", {"ckpt": args.ckpt, "sweep": args.sweep or ""},
                   args.seed or 0, hash_tree(args.data), [str(out)], started)
    return EXIT_OK


def _export_png(path, pixels: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(pixels, 0.0, 1.0)
    img8 = (np.round(arr * 255.0)).astype(np.uint8)
    if img8.shape[2] == 1:
        img8 = img8[:, :, 0]
    Image.fromarray(img8).save(path)


def cmd_infer(args) -> int:
    from .evaluation import psnr, ssim
    from .training import load_checkpoint, model_from_checkpoint, predict_sample

    started = time.time()
    payload = load_checkpoint(args.ckpt)
    model, cfg = model_from_checkpoint(payload)
    has_gt = (Path(args.sample) / "gt.img").exists() and not args.no_reference
    sample = load_sample(args.sample, require_gt=False)
    violations = validate_sample(sample)
    if violations:
        raise DatasetError(f"invalid sample {args.sample}: {violations}")
    if sample.gt.channels != cfg.image_channels:
        raise ConfigError(
            f"checkpoint expects {cfg.image_channels}-channel images, "
            f"sample has {sample.gt.channels}"
        )
    if args.dry_run:
        print(f"infer: {args.sample} with {args.ckpt} -> {args.out}")
        return EXIT_OK

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    preds = predict_sample(model, sample, cfg.event_bins)
    outputs = []
    for name in ("fused", "deblurred", "enhanced"):
        path = out_dir / f"{name}.png"
        _export_png(path, preds[name])
        outputs.append(str(path))

    report: dict = {"reference": "gt" if has_gt else "no-reference"}
    if has_gt:
        for name in ("fused", "deblurred", "enhanced"):
            report[f"psnr_{name}"] = psnr(preds[name], sample.gt.pixels)
            report[f"ssim_{name}"] = ssim(preds[name], sample.gt.pixels)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    write_manifest(out_dir, "infer", {"ckpt": args.ckpt}, args.seed or 0,
                   hash_tree(args.sample), outputs, started)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_stats(args) -> int:
    from .evaluation import dataset_stats

    started = time.time()
    entries = load_dataset(args.data)
    if args.dry_run:
        print(f"stats: {len(entries)} samples -> {args.out}")
        return EXIT_OK
    groups: dict[str, list] = {}
    for seq, _, sample in entries:
        groups.setdefault(seq, []).append(sample)
    report = dataset_stats(list(groups.values()))
    payload = {
        "motion_mag_px": report.motion_mag,
        "illumination": report.illumination,
        "texture": report.texture,
        "event_rate_mev_s": report.event_rate,
        "notes": list(report.notes),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2) + "\n")
    write_manifest(out.parent, "stats", {}, args.seed or 0, hash_tree(args.data),
                   [str(out)], started)
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_viz(args) -> int:
    from .visualize import render_panel

    started = time.time()
    sample = load_sample(args.sample)
    preds = None
    if args.pred:
        pred_dir = Path(args.pred)
        from PIL import Image

        preds = {}
        for name in ("fused", "deblurred", "enhanced"):
            p = pred_dir / f"{name}.png"
            if p.exists():
                with Image.open(p) as im:
                    preds[name] = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        if not preds:
            raise DatasetError(f"no prediction images found under {pred_dir}")
    inset = None
    if args.inset:
        try:
            inset = tuple(int(v) for v in args.inset.split(","))
            assert len(inset) == 3
        except (ValueError, AssertionError):
            raise ConfigError("--inset expects x,y,size") from None
    if args.dry_run:
        print(f"viz: {args.sample} -> {args.out}")
        return EXIT_OK
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    render_panel(sample, preds, out, inset=inset)
    write_manifest(out.parent, "viz", {"inset": args.inset or ""}, args.seed or 0,
                   hash_tree(args.sample), [str(out)], started)
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edei", description=__doc__)
    parser.add_argument("--seed", type=int, default=None, help="seed overriding config values")
    parser.add_argument("--dry-run", action="store_true", help="validate and print the plan only")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a dataset from sharp frames")
    p.add_argument("--input", required=True, help="directory of sharp frames")
    p.add_argument("--out", required=True, help="dataset root to write")
    p.add_argument("--recipe", help="flat key=value recipe file")
    p.add_argument("--sequence", help="sequence name (defaults to the input dir name)")
    p.add_argument("--count", type=int, help="cap the number of samples")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="flat key=value training config")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", help="stage-1 checkpoint (required for stage 2)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, optionally sweeping")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sweep", choices=("temporal", "ratio"))
    p.add_argument("--frames", help="sharp frames dir (ratio sweep)")
    p.add_argument("--recipe", help="recipe file (ratio sweep)")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="run a checkpoint on one sample")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-reference", action="store_true", help="skip metrics even if gt exists")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("viz", help="side-by-side panel with zoom insets")
    p.add_argument("--sample", required=True)
    p.add_argument("--pred", help="directory with infer outputs")
    p.add_argument("--out", required=True)
    p.add_argument("--inset", help="x,y,size crop for the zoom inset")
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    from .training import CheckpointError

    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_CHECKPOINT


if __name__ == "__main__":
    sys.exit(main())
