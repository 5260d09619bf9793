"""Command-line entry point: phantoms, augment-preview, train, segment, evaluate, ablation."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import augment as aug
from . import metrics as met
from .config import ConfigError, RunConfig, freeze, load_run_config
from .data_io import _read_gray, generate_phantoms, load_dataset, save_dataset, split_dataset
from .model import load_checkpoint, predict_soft
from .postprocess import postprocess
from .preprocess import preprocess_dataset, preprocess_image, resize_mask
from .train import fit


@contextlib.contextmanager
def _owned_dir(out_dir: Path):
    """Exclusive ownership of an output directory via a lock file."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".vimpute.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(f"output directory {out_dir} is locked by another run "
                           f"(remove {lock} if that run is dead)")
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _parse_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) == 1:
        side = int(parts[0])
        return side, side
    if len(parts) == 2:
        return int(parts[0]), int(parts[1])
    raise ValueError(f"size must look like 128 or 640x512, got {text!r}")


def _load_splits(data_root: Path, seed: int):
    """Return (train, val, test-or-None) datasets from either layout.

    Either `<root>/{train,val[,test]}/images|masks` or a single
    `<root>/images|masks` pool that gets a seeded 0.75/0.25 split.
    """
    if (data_root / "train").is_dir():
        train = load_dataset(data_root / "train", "train")
        val = load_dataset(data_root / "val", "val")
        test = load_dataset(data_root / "test", "test") if (data_root / "test").is_dir() else None
        return train, val, test
    pool = load_dataset(data_root)
    train, val = split_dataset(pool, (0.75, 0.25), seed)
    return train, val, None


def _save_mask_png(mask: np.ndarray, path: Path) -> None:
    Image.fromarray((np.asarray(mask) * 255).astype(np.uint8), mode="L").save(path)


def _save_gray_png(img: np.ndarray, path: Path) -> None:
    Image.fromarray(np.round(np.asarray(img) * 255).astype(np.uint8), mode="L").save(path)


def cmd_phantoms(args) -> int:
    h, w = _parse_size(args.size)
    ds = generate_phantoms(args.n, (h, w), args.occluded_fraction, args.seed)
    with _owned_dir(Path(args.out)) as out:
        save_dataset(ds, out)
        (out / "phantoms.args.txt").write_text(
            f"n = {args.n}\nsize = {h}x{w}\noccluded_fraction = {args.occluded_fraction}\n"
            f"seed = {args.seed}\n"
        )
    print(f"wrote {len(ds)} phantom pairs to {args.out}")
    return 0


def _montage(panels: list[np.ndarray], gap: int = 2) -> np.ndarray:
    h = max(p.shape[0] for p in panels)
    w = sum(p.shape[1] for p in panels) + gap * (len(panels) - 1)
    canvas = np.ones((h, w), dtype=np.float32)
    x = 0
    for p in panels:
        canvas[: p.shape[0], x : x + p.shape[1]] = p
        x += p.shape[1] + gap
    return canvas


def cmd_augment_preview(args) -> int:
    cfg = load_run_config(args.config, args.override)
    img = _read_gray(Path(args.image))
    img = preprocess_image(img, cfg.preprocess())
    dummy_mask = np.zeros(img.shape, dtype=np.uint8)
    acfg = cfg.augment()
    rng = np.random.default_rng(args.seed)
    std_img, _ = aug.standard_augment(img, dummy_mask, acfg, rng)
    blk_img = aug.block_mask(img, rng)
    dif_img = aug.diffused_noise(img, acfg, rng)
    all_cfg = replace(acfg, p_aug=1.0, enable_standard=True, enable_block=True,
                      enable_diffuse=True)
    all_img, _ = aug.apply(img, dummy_mask, all_cfg, rng)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _save_gray_png(_montage([img, std_img, blk_img, dif_img, all_img]), out_path)
    print(f"wrote panel [original | standard | block | diffuse | combined] to {out_path}")
    return 0


def _resolve_data_root(cfg) -> Path:
    """Config data_root, else the VIMPUTE_DATA_ROOT environment variable."""
    root = cfg.data_root or os.environ.get("VIMPUTE_DATA_ROOT", "")
    if not root:
        raise FileNotFoundError("no data_root configured and VIMPUTE_DATA_ROOT is unset")
    return Path(root)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.override)
    data_root = _resolve_data_root(cfg)
    if not data_root.is_dir():
        raise FileNotFoundError(f"data_root {data_root} does not exist")
    train_ds, val_ds, _ = _load_splits(data_root, cfg.seed)
    pre = cfg.preprocess()
    train_ds, val_ds = preprocess_dataset(train_ds, pre), preprocess_dataset(val_ds, pre)
    with _owned_dir(Path(args.out)) as out:
        freeze(cfg, out)
        best, state = fit(cfg.model(), cfg.train(checkpoint_dir=out), cfg.augment(),
                          train_ds, val_ds)
    print(f"best validation loss {state.best_val_loss:.6f} at epoch {state.best_epoch} "
          f"({state.epoch} epochs run)")
    return 0


def _iter_input_images(input_dir: Path):
    img_dir = input_dir / "images" if (input_dir / "images").is_dir() else input_dir
    files = sorted(img_dir.glob("*.png"))
    if not files:
        raise ValueError(f"no PNG images found in {img_dir}")
    return files


def _overlay(gray: np.ndarray, pred: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Error coloring: green = true positive, blue = false negative, red = false positive."""
    base = np.stack([gray, gray, gray], axis=-1)
    color = np.zeros_like(base)
    pred, ref = pred.astype(bool), ref.astype(bool)
    color[pred & ref] = (0.0, 1.0, 0.0)
    color[~pred & ref] = (0.0, 0.0, 1.0)
    color[pred & ~ref] = (1.0, 0.0, 0.0)
    tinted = np.where(color.sum(-1, keepdims=True) > 0, 0.45 * base + 0.55 * color, base)
    return np.round(np.clip(tinted, 0, 1) * 255).astype(np.uint8)


def cmd_segment(args) -> int:
    cfg = load_run_config(args.config, args.override)
    model, _ = load_checkpoint(args.checkpoint)
    pre, post_cfg = cfg.preprocess(), cfg.post()
    files = _iter_input_images(Path(args.input))
    ref_dir = Path(args.reference) if args.reference else None
    with _owned_dir(Path(args.out)) as out:
        freeze(cfg, out)
        for f in files:
            orig = _read_gray(f)
            proc = preprocess_image(orig, pre)
            mask = postprocess(predict_soft(model, proc), post_cfg)
            mask = resize_mask(mask, orig.shape[0], orig.shape[1])
            _save_mask_png(mask, out / f.name)
            if ref_dir is not None:
                ref_path = ref_dir / "masks" / f.name if (ref_dir / "masks").is_dir() else ref_dir / f.name
                ref = (_read_gray(ref_path) > 0.5).astype(np.uint8)
                Image.fromarray(_overlay(orig, mask, ref), mode="RGB").save(
                    out / f"{f.stem}_overlay.png"
                )
    print(f"wrote {len(files)} masks to {args.out}")
    return 0


def _evaluate_checkpoint(model, ds, cfg: RunConfig, out: Path) -> met.EvalReport:
    report = met.evaluate(model, ds, cfg.post())
    report.to_json(out / "report.json")
    report.to_csv(out / "report.csv")
    return report


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config, args.override)
    model, _ = load_checkpoint(args.checkpoint)
    data_root = Path(args.data)
    if not data_root.is_dir():
        raise FileNotFoundError(f"data directory {data_root} does not exist")
    if (data_root / "test").is_dir():
        ds = load_dataset(data_root / "test", "test")
    else:
        ds = load_dataset(data_root, "test")
    ds = preprocess_dataset(ds, cfg.preprocess())
    with _owned_dir(Path(args.out)) as out:
        freeze(cfg, out)
        report = _evaluate_checkpoint(model, ds, cfg, out)
    print(f"dice {report.dice_mean:.4f} +/- {report.dice_std:.4f}  "
          f"accuracy {report.acc_mean:.4f} +/- {report.acc_std:.4f}  (n={len(report.per_image)})")
    return 0


ABLATION_ROWS = [
    ("standard", dict(enable_standard=True, enable_block=False, enable_diffuse=False)),
    ("block", dict(enable_standard=False, enable_block=True, enable_diffuse=False)),
    ("diffuse", dict(enable_standard=False, enable_block=False, enable_diffuse=True)),
    ("block_diffuse", dict(enable_standard=False, enable_block=True, enable_diffuse=True)),
]


def cmd_ablation(args) -> int:
    cfg = load_run_config(args.config, args.override)
    data_root = _resolve_data_root(cfg)
    if not data_root.is_dir():
        raise FileNotFoundError(f"data_root {data_root} does not exist")
    train_ds, val_ds, test_ds = _load_splits(data_root, cfg.seed)
    if test_ds is None:
        raise ValueError(f"ablation needs a test split: {data_root}/test not found")
    pre = cfg.preprocess()
    train_ds = preprocess_dataset(train_ds, pre)
    val_ds = preprocess_dataset(val_ds, pre)
    test_ds = preprocess_dataset(test_ds, pre)

    with _owned_dir(Path(args.out)) as out:
        freeze(cfg, out)
        summary_rows = []
        ttest_rows = []
        dice_by_row: dict[tuple[str, str], list] = {}
        acc_by_row: dict[tuple[str, str], list] = {}
        for aug_name, enables in ABLATION_ROWS:
            for variant in ("baseline", "proposed"):
                row_dir = out / f"{variant}_{aug_name}"
                acfg = replace(cfg.augment(), **enables)
                best, state = fit(cfg.model(variant=variant),
                                  cfg.train(checkpoint_dir=row_dir), acfg,
                                  train_ds, val_ds)
                report = _evaluate_checkpoint(best, test_ds, cfg, row_dir)
                dice_by_row[(variant, aug_name)] = [e["dice"] for e in report.per_image]
                acc_by_row[(variant, aug_name)] = [e["accuracy"] for e in report.per_image]
                summary_rows.append(
                    {"model": variant, "augmentation": aug_name,
                     "dice_mean": report.dice_mean, "dice_std": report.dice_std,
                     "acc_mean": report.acc_mean, "acc_std": report.acc_std}
                )
                _write_summary(out, summary_rows, ttest_rows)   # keep partial results fresh
                print(f"{variant:9s} {aug_name:14s} dice {report.dice_mean:.4f} "
                      f"+/- {report.dice_std:.4f}  acc {report.acc_mean:.4f}")
            for metric, store in (("dice", dice_by_row), ("accuracy", acc_by_row)):
                a = store[("proposed", aug_name)]
                b = store[("baseline", aug_name)]
                try:
                    t, p = met.paired_ttest(a, b)
                except ValueError as exc:
                    t, p = float("nan"), float("nan")
                    print(f"t-test skipped for {aug_name}/{metric}: {exc}")
                ttest_rows.append(
                    {"augmentation": aug_name, "metric": metric,
                     "config_a": f"proposed_{aug_name}", "config_b": f"baseline_{aug_name}",
                     "t_statistic": t, "p_value": p}
                )
            _write_summary(out, summary_rows, ttest_rows)
    print(f"ablation summary written to {out / 'summary.csv'}")
    return 0


def _write_summary(out: Path, summary_rows, ttest_rows) -> None:
    with open(out / "summary.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["model", "augmentation", "dice_mean",
                                               "dice_std", "acc_mean", "acc_std"])
        writer.writeheader()
        writer.writerows(summary_rows)
    (out / "summary.json").write_text(json.dumps(
        {"rows": summary_rows, "paired_ttests": ttest_rows}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vimpute-seg",
        description="Occlusion-robust lung segmentation with variational imputation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantoms", help="generate a synthetic lung-phantom dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--size", default="128x128", help="HxW, e.g. 640x512")
    p.add_argument("--occluded-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_phantoms)

    p = sub.add_parser("augment-preview", help="write a before/after augmentation panel")
    p.add_argument("--config", default=None)
    p.add_argument("--image", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--override", action="append", default=[])
    p.set_defaults(func=cmd_augment_preview)

    p = sub.add_parser("train", help="train a model per the run config")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment a directory of images with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--reference", default=None,
                   help="directory of reference masks; enables error overlays")
    p.add_argument("--config", default=None)
    p.add_argument("--override", action="append", default=[])
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a labeled dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--override", action="append", default=[])
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation", help="train and evaluate the full 8-row grid")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--override", action="append", default=[])
    p.set_defaults(func=cmd_ablation)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
