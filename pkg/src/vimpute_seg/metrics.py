"""Segmentation metrics, report aggregation, and paired t-tests."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.special import betainc

from .data_io import Dataset
from .model import SegmentationModel, predict_soft
from .postprocess import PostprocessConfig, postprocess


def dice(pred: np.ndarray, target: np.ndarray) -> float:
    """2|P & T| / (|P| + |T|); defined as 1.0 when both masks are empty."""
    pred, target = np.asarray(pred).astype(bool), np.asarray(target).astype(bool)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    denom = int(pred.sum()) + int(target.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, target).sum()) / denom


def accuracy(pred: np.ndarray, target: np.ndarray) -> float:
    """Fraction of pixels where pred == target."""
    pred, target = np.asarray(pred).astype(bool), np.asarray(target).astype(bool)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return int((pred == target).sum()) / pred.size


def student_t_sf(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the regularized incomplete beta."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


def paired_ttest(a, b) -> tuple[float, float]:
    """Two-sided paired-sample t-test on the differences a - b."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be 1-D and of equal length")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 paired observations")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0:
        raise ValueError("zero-variance differences: degenerate comparison")
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, student_t_sf(t, n - 1)


def _quartiles(values) -> dict[str, float]:
    v = np.asarray(values, dtype=np.float64)
    q = np.percentile(v, [0, 25, 50, 75, 100])
    return {"min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4]}


@dataclass
class EvalReport:
    per_image: list[dict]                 # id, dice, accuracy, raw_dice, raw_accuracy
    dice_mean: float
    dice_std: float
    acc_mean: float
    acc_std: float
    raw_dice_mean: float
    raw_acc_mean: float
    box: dict[str, dict[str, float]]
    comparisons: list[dict] = field(default_factory=list)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(
                f, fieldnames=["id", "dice", "accuracy", "raw_dice", "raw_accuracy"]
            )
            writer.writeheader()
            writer.writerows(self.per_image)

    @staticmethod
    def from_json(path) -> "EvalReport":
        return EvalReport(**json.loads(Path(path).read_text()))


def compute_report(entries) -> EvalReport:
    """Aggregate (id, dice, accuracy, raw_dice, raw_accuracy) rows into a report.

    Means use the plain average; stds are population stds so a single-image
    set reports 0.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("cannot aggregate an empty evaluation")
    d = np.array([e["dice"] for e in entries])
    a = np.array([e["accuracy"] for e in entries])
    return EvalReport(
        per_image=entries,
        dice_mean=float(d.mean()),
        dice_std=float(d.std()),
        acc_mean=float(a.mean()),
        acc_std=float(a.std()),
        raw_dice_mean=float(np.mean([e["raw_dice"] for e in entries])),
        raw_acc_mean=float(np.mean([e["raw_accuracy"] for e in entries])),
        box={"dice": _quartiles(d), "accuracy": _quartiles(a)},
    )


def evaluate(model: SegmentationModel, test_ds: Dataset, post_cfg: PostprocessConfig) -> EvalReport:
    """Deterministic eval-mode forward + postprocessing per image.

    Headline dice/accuracy are computed on post-processed masks; metrics on
    the raw thresholded predictions are recorded alongside for diagnostics.
    """
    if len(test_ds) == 0:
        raise ValueError("empty test set")
    entries = []
    for s in test_ds:
        soft = predict_soft(model, s.image)
        pred = postprocess(soft, post_cfg)
        raw = (soft > post_cfg.threshold).astype(np.uint8)
        entries.append(
            {
                "id": s.id,
                "dice": dice(pred, s.mask),
                "accuracy": accuracy(pred, s.mask),
                "raw_dice": dice(raw, s.mask),
                "raw_accuracy": accuracy(raw, s.mask),
            }
        )
    return compute_report(entries)
