"""ROC/AUC and the OOC vs in-context accuracy split."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, ShapeError


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    true_positive_rate: float
    false_positive_rate: float


def _scores_truth(records) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([r.score for r in records], dtype=np.float64)
    truth = np.array([bool(r.truth) for r in records], dtype=bool)
    n_pos = int(truth.sum())
    if n_pos == 0 or n_pos == truth.size:
        raise DegenerateInputError(f"AUC needs both classes; got {n_pos} positives of {truth.size}")
    return scores, truth


def tied_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, ties receiving the mean of the ranks they span."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    ranks = np.empty(x.size)
    start = 0
    for end in range(1, x.size + 1):
        if end == x.size or sx[end] != sx[start]:
            ranks[order[start:end]] = (start + 1 + end) / 2.0
            start = end
    return ranks


def rank_auc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Mann-Whitney form: [#(pos > neg) + 0.5 #(pos == neg)] / (#pos #neg)."""
    n_pos = int(truth.sum())
    n_neg = truth.size - n_pos
    u = tied_ranks(scores)[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_curve(records) -> list[RocPoint]:
    """(0,0), then one point per distinct score in descending order, ending at (1,1)."""
    scores, truth = _scores_truth(records)
    n_pos = truth.sum()
    n_neg = truth.size - n_pos
    order = np.argsort(-scores, kind="mergesort")
    s, t = scores[order], truth[order]
    tp = np.cumsum(t)
    fp = np.cumsum(~t)
    last_of_run = np.append(s[1:] != s[:-1], True)
    points = [RocPoint(float("inf"), 0.0, 0.0)]
    for k in np.flatnonzero(last_of_run):
        points.append(RocPoint(float(s[k]), float(tp[k] / n_pos), float(fp[k] / n_neg)))
    return points


def roc_area(points: Sequence[RocPoint]) -> float:
    area = 0.0
    for a, b in zip(points, points[1:]):
        area += (b.false_positive_rate - a.false_positive_rate) * (b.true_positive_rate + a.true_positive_rate) / 2.0
    return area


def auc(records) -> float:
    """Rank-formula AUC, cross-checked against the trapezoidal ROC area."""
    scores, truth = _scores_truth(records)
    value = rank_auc(scores, truth)
    trapezoid = roc_area(roc_curve(records))
    if abs(value - trapezoid) > 1e-9:
        raise RuntimeError(f"AUC implementations disagree: rank {value} vs trapezoid {trapezoid}")
    return value


@dataclass(frozen=True)
class AccuracyReport:
    ooc_accuracy: float | None  # None when there are no OOC nodes
    non_ooc_accuracy: float | None
    overall_accuracy: float | None
    ooc_count: int = 0
    non_ooc_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def accuracy_report(node_predictions, node_truth_labels, ooc_flags) -> AccuracyReport:
    pred = np.asarray(node_predictions)
    true = np.asarray(node_truth_labels)
    flags = np.asarray(ooc_flags, dtype=bool)
    if not (pred.shape == true.shape == flags.shape) or pred.ndim != 1:
        raise ShapeError(f"misaligned inputs {pred.shape}, {true.shape}, {flags.shape}")
    correct = pred == true

    def rate(mask):
        return float(correct[mask].sum() / mask.sum()) if mask.any() else None

    return AccuracyReport(
        rate(flags), rate(~flags), rate(np.ones_like(flags)), int(flags.sum()), int((~flags).sum())
    )
