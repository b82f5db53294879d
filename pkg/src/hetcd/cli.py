"""Command-line entry point: ``hetcd {synth,train,detect,translate,evaluate}``.

Exit codes: 0 success, 1 I/O failure, 2 usage or validation error,
3 numerical failure (divergence, indefinite covariance).  Every command
writes into a staging directory and only moves its artifacts into ``--out``
once all of them exist, so a failed run leaves nothing behind.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, format_config, load_config
from .data_io import (generate_synthetic_pair, load_binary_png, load_di_raw, load_pair,
                      load_raster, load_scene, save_binary_png, save_di_raw, save_png, save_raster,
                      save_scene)
from .detector import detect_changes
from .errors import (ConfigError, DomainError, NumericalError, ShapeError, TrainingError,
                     ValidationError)
from .losses import COMPONENTS
from .metrics import (ConfusionCounts, MetricsReport, classification_metrics, confusion_counts,
                      extract_features, fid, kid, overall_from_errors, roc_pr_curves, tile_image)
from .model import cycle, translate
from .trainer import fit

log = logging.getLogger("hetcd")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    """Bad command-line input detected after argument parsing."""


# ---------------------------------------------------------------------------
# helpers


@contextlib.contextmanager
def staged_output(out: Path):
    """Yield a staging directory; move its files into ``out`` only on success."""
    created = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        if created:
            with contextlib.suppress(OSError):
                out.rmdir()
        raise
    for item in sorted(stage.iterdir()):
        os.replace(item, out / item.name)
    stage.rmdir()


def _overrides(args) -> dict[str, str]:
    values: dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    flag_keys = {
        "seed": "seed", "epochs": "epochs_per_iteration", "iterations": "iterations",
        "lr": "learning_rate", "batch_size": "batch_size", "patch_size": "patch_size",
        "stride": "stride", "sigma": "filter_sigma", "filter_kernel": "filter_kernel_size",
    }
    for attr, key in flag_keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            values[key] = value
    for name in getattr(args, "disable", None) or []:
        values[f"loss_{name}"] = False
    if getattr(args, "no_augment", False):
        values["augment"] = False
    if getattr(args, "no_filter", False):
        values["filter_enabled"] = False
    return values


def _run_config(args) -> RunConfig:
    return load_config(args.config, _overrides(args))


def _load_inputs(args) -> tuple[np.ndarray, np.ndarray]:
    if getattr(args, "scene", None):
        scene = load_scene(args.scene)
        return scene.image_x.data, scene.image_y.data
    if not (args.x and args.y):
        raise UsageError("give --scene DIR or both --x and --y")
    resample_to = tuple(args.resample) if getattr(args, "resample", None) else None
    x, y = load_pair(args.x, args.y, resample_to=resample_to)
    return x.data, y.data


def _checkpoint(args):
    path = Path(args.checkpoint)
    if not path.is_file():
        raise UsageError(f"--checkpoint: no such file {path}")
    return load_checkpoint(path)


def _write_losses(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "epoch", *COMPONENTS, "total"])
        for r in history:
            writer.writerow([r.iteration, r.epoch, *(repr(getattr(r, k)) for k in (*COMPONENTS, "total"))])


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    height = args.height or args.size
    width = args.width or args.size
    if height < 64 or width < 64:
        raise UsageError(f"--size/--height/--width must be >= 64, got {height}x{width}")
    if not 0 < args.change < 0.5:
        raise UsageError(f"--change must lie in (0, 0.5), got {args.change}")
    seed = 0 if args.seed is None else args.seed
    scene = generate_synthetic_pair(seed, height, width, args.change)
    with staged_output(Path(args.out)) as stage:
        save_scene(stage, scene)
    print(f"wrote scene seed={seed} {height}x{width} changed share={scene.gt.mean():.4f} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    x, y = _load_inputs(args)
    arch = cfg.arch
    if (arch.channels_x, arch.channels_y) != (x.shape[2], y.shape[2]):
        arch = dataclasses.replace(arch, channels_x=x.shape[2], channels_y=y.shape[2])

    def report(record):
        log.info("iteration %d epoch %d: %s", record.iteration, record.epoch,
                 " ".join(f"{k}={getattr(record, k):.5f}" for k in (*COMPONENTS, "total")))

    result = fit(x, y, cfg.train, arch, tile=args.tile, on_epoch=report)
    with staged_output(Path(args.out)) as stage:
        save_checkpoint(stage / "checkpoint.raw", result.model)
        _write_losses(stage / "losses.csv", result.history)
        save_binary_png(stage / "mask.png", result.mask)
        (stage / "config.txt").write_text(format_config(RunConfig(arch, cfg.train, cfg.filter, cfg.metric)))
    final = result.history[-1].total if result.history else float("nan")
    print(f"trained {len(result.history)} epochs, final total loss {final:.6f}; wrote {args.out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _run_config(args)
    model = _checkpoint(args)
    x, y = _load_inputs(args)
    det = detect_changes(model, x, y, cfg.filter, tile=args.tile)
    with staged_output(Path(args.out)) as stage:
        save_di_raw(stage / "di.raw", det.di)
        save_png(stage / "di.png", det.di, scale=True)
        save_binary_png(stage / "cm.png", det.change_map)
    print(f"threshold {det.threshold!r}")
    print(f"changed pixels {int(det.change_map.sum())} of {det.change_map.size}")
    return EXIT_OK


def cmd_translate(args) -> int:
    model = _checkpoint(args)
    x, y = _load_inputs(args)
    x_hat, y_hat = translate(model, x, y)
    with staged_output(Path(args.out)) as stage:
        # y_hat renders X's content in the Y domain, x_hat renders Y's content in X
        save_raster(stage / "x_to_y.raw", y_hat)
        save_raster(stage / "y_to_x.raw", x_hat)
        save_png(stage / "x_to_y.png", y_hat)
        save_png(stage / "y_to_x.png", x_hat)
        if args.cycle:
            x_cyc, y_cyc = cycle(model, x, y)
            save_raster(stage / "x_cycle.raw", x_cyc)
            save_raster(stage / "y_cycle.raw", y_cyc)
    print(f"wrote translations ({y_hat.shape[2]} and {x_hat.shape[2]} channels) to {args.out}")
    return EXIT_OK


def _translation_quality(real_path, translated_path, cfg: RunConfig, workers: int):
    real = load_raster(real_path).data
    translated = load_raster(translated_path).data
    m = cfg.metric
    tiles_r = tile_image(real, m.tile_size, m.tile_stride)
    tiles_t = tile_image(translated, m.tile_size, m.tile_stride)
    opts = {"grid": m.window_grid} if m.extractor == "stats" else {}
    f_r = extract_features(tiles_r, m.extractor, workers, **opts)
    f_t = extract_features(tiles_t, m.extractor, workers, **opts)
    return fid(f_r, f_t), kid(f_r, f_t, unbiased=m.kid_unbiased), len(tiles_r)


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    report = MetricsReport()
    curves = {}
    if args.counts:
        fp, fn, n = args.counts
        oe, oa = overall_from_errors(fp, fn, n)
        report.counts = {"fp": fp, "fn": fn, "n": n}
        report.classification = {"oe": oe, "oa": oa}
        if args.tp is not None:
            tn = n - fp - fn - args.tp
            if tn < 0:
                raise UsageError("--tp: tp + fp + fn exceeds n")
            m = classification_metrics(ConfusionCounts(args.tp, fp, tn, fn))
            report.counts.update(tp=args.tp, tn=tn)
            report.classification = {k: v for k, v in m.__dict__.items() if k not in ("fp", "fn")}
    elif args.gt:
        gt = load_binary_png(args.gt)
        if args.cm:
            c = confusion_counts(load_binary_png(args.cm), gt)
            m = classification_metrics(c)
            report.counts = {"tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn, "n": c.n}
            report.classification = {k: v for k, v in m.__dict__.items() if k not in ("fp", "fn")}
        if args.di:
            di = load_di_raw(args.di) if _is_di_dump(args.di) else load_raster(args.di).data[..., 0]
            roc, pr, auc, ap = roc_pr_curves(di, gt)
            report.auc, report.ap = auc, ap
            curves = {"roc.csv": (roc, "fpr", "tpr"), "pr.csv": (pr, "recall", "precision")}
    if args.real or args.translated:
        if len(args.real or []) != len(args.translated or []):
            raise UsageError("--real and --translated must be given the same number of times")
        report.fid, report.kid = {}, {}
        for r, t in zip(args.real, args.translated):
            f, k, n_tiles = _translation_quality(r, t, cfg, args.workers)
            label = Path(t).stem
            report.fid[label], report.kid[label] = f, k
            log.info("%s: FID %.6g KID %.6g over %d tiles", label, f, k, n_tiles)
    if report == MetricsReport():
        raise UsageError("nothing to evaluate: give --counts, --gt with --cm/--di, or --real/--translated")
    with staged_output(Path(args.out)) as stage:
        (stage / "report.json").write_text(report.to_json())
        for name, (points, x_name, y_name) in curves.items():
            points.to_csv(stage / name, x_name, y_name)
    print(report.to_json(), end="")
    return EXIT_OK


def _is_di_dump(path) -> bool:
    with open(path, "rb") as fh:
        head = fh.readline(64)
    parts = head.split()
    return len(parts) == 2 and all(p.isdigit() for p in parts) and head.endswith(b"\n")


# ---------------------------------------------------------------------------
# parser


def _shared(p: argparse.ArgumentParser, out_required: bool = True) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="root seed for every random draw")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="worker threads for metric sweeps")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--x", help="image from sensor X")
    p.add_argument("--y", help="image from sensor Y")
    p.add_argument("--scene", help="synthetic scene directory (instead of --x/--y)")
    p.add_argument("--resample", type=int, nargs=2, metavar=("H", "W"),
                   help="bilinearly resample both images to H x W")
    p.add_argument("--tile", type=int, help="run whole-image inference in overlapping tiles")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hetcd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic two-sensor scene")
    _shared(p)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--change", type=float, default=0.1, help="target changed-pixel share")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit a model on one image pair")
    _shared(p)
    _inputs(p)
    p.add_argument("--epochs", type=int, help="epochs per iteration")
    p.add_argument("--iterations", type=int, help="mask-update rounds")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--disable", action="append", choices=COMPONENTS, help="switch off one loss term")
    p.add_argument("--no-augment", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="difference image and change map")
    _shared(p)
    _inputs(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--no-filter", action="store_true", help="threshold the unfiltered difference image")
    p.add_argument("--sigma", type=float)
    p.add_argument("--filter-kernel", type=int)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("translate", help="export both cross-domain translations")
    _shared(p)
    _inputs(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cycle", action="store_true", help="also write the round-trip reconstructions")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="change-map, difference-image and translation metrics")
    _shared(p)
    p.add_argument("--gt", help="ground-truth change map (PNG)")
    p.add_argument("--cm", help="predicted change map (PNG)")
    p.add_argument("--di", help="difference image (di.raw or raster)")
    p.add_argument("--counts", type=int, nargs=3, metavar=("FP", "FN", "N"),
                   help="score from error counts alone")
    p.add_argument("--tp", type=int, help="true positives, with --counts")
    p.add_argument("--real", action="append", help="real image for FID/KID (repeatable)")
    p.add_argument("--translated", action="append", help="translated image for FID/KID (repeatable)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ValidationError, ShapeError, DomainError) as exc:
        print(f"hetcd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, NumericalError, FloatingPointError) as exc:
        print(f"hetcd {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"hetcd {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
