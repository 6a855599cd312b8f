"""Confusion-count evaluation: F1 and mean intersection-over-union."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .containers import ChangeMask, Image
from .errors import ShapeError
from .fileio import atomic_write_bytes


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def binarize(prob: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Pixel positive iff probability >= tau; tau must lie strictly in (0, 1)."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"threshold {tau} outside (0, 1)")
    prob = np.asarray(prob)
    if prob.min() < 0.0 or prob.max() > 1.0:
        raise ValueError("probabilities must lie in [0, 1]")
    return prob >= tau


def mask_to_binary(mask: ChangeMask) -> np.ndarray:
    """Ground-truth binarization: positive above half of s_max."""
    return mask.values > mask.s_max / 2


def confusion(pred: np.ndarray, gt: np.ndarray) -> Confusion:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask dims {pred.shape} vs {gt.shape}")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return Confusion(tp, fp, fn, tn)


def f1(c: Confusion) -> float:
    denom = 2 * c.tp + c.fp + c.fn
    return 2.0 * c.tp / denom if denom else 0.0


def miou(c: Confusion) -> float:
    """Mean of the change and no-change IoUs.

    A class with an empty union is undefined and drops out of the mean;
    with both classes undefined the masks agree trivially and the score
    is 1.
    """
    parts = []
    if c.tp + c.fp + c.fn:
        parts.append(c.tp / (c.tp + c.fp + c.fn))
    if c.tn + c.fp + c.fn:
        parts.append(c.tn / (c.tn + c.fp + c.fn))
    return float(np.mean(parts)) if parts else 1.0


@dataclass(frozen=True)
class PairScore:
    pair_id: str
    f1: float
    miou: float


@dataclass(frozen=True)
class FoldReport:
    scores: tuple[PairScore, ...]
    mean_f1: float
    std_f1: float
    mean_miou: float
    std_miou: float
    pooled: Confusion


def evaluate_fold(
    predictions: list[np.ndarray],
    gts: list[np.ndarray],
    tau: float = 0.5,
    pair_ids: list[str] | None = None,
) -> FoldReport:
    """Score aligned probability maps against boolean ground-truth masks.

    Aggregates (mean, population standard deviation) are taken over pairs;
    the pooled confusion is also reported for pixel-level aggregation.
    """
    if not predictions:
        raise ValueError("no predictions to evaluate")
    if len(predictions) != len(gts):
        raise ValueError(f"{len(predictions)} predictions vs {len(gts)} ground truths")
    ids = pair_ids or [str(i) for i in range(len(predictions))]
    if len(ids) != len(predictions):
        raise ValueError("pair_ids misaligned with predictions")

    scores = []
    pooled = Confusion(0, 0, 0, 0)
    for pid, prob, gt in zip(ids, predictions, gts):
        c = confusion(binarize(prob, tau), gt)
        pooled = pooled + c
        scores.append(PairScore(pid, f1(c), miou(c)))
    f1s = np.array([s.f1 for s in scores])
    mious = np.array([s.miou for s in scores])
    return FoldReport(
        scores=tuple(scores),
        mean_f1=float(f1s.mean()),
        std_f1=float(f1s.std()),
        mean_miou=float(mious.mean()),
        std_miou=float(mious.std()),
        pooled=pooled,
    )


def report_to_csv(report: FoldReport, path: str | Path) -> None:
    lines = ["pair_id,f1,miou"]
    lines += [f"{s.pair_id},{s.f1:.6f},{s.miou:.6f}" for s in report.scores]
    lines.append(f"mean,{report.mean_f1:.6f},{report.mean_miou:.6f}")
    lines.append(f"std,{report.std_f1:.6f},{report.std_miou:.6f}")
    lines.append(
        f"pooled,{f1(report.pooled):.6f},{miou(report.pooled):.6f}"
    )
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode())


def overlay_image(pred: np.ndarray, gt: np.ndarray) -> Image:
    """TP white, FP red, FN blue, TN black."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ShapeError(f"mask dims {pred.shape} vs {gt.shape}")
    out = np.zeros(pred.shape + (3,), dtype=np.uint8)
    out[pred & gt] = (255, 255, 255)
    out[pred & ~gt] = (220, 40, 40)
    out[~pred & gt] = (40, 80, 220)
    return Image(out)
