"""Threshold-based classification metrics, ROC analysis and descriptive stats.

Thresholding is inclusive: a score equal to the threshold predicts true, so
threshold 0 predicts everything true.  Precision is undefined (absent) when
nothing is predicted true; downstream reports leave the field empty there,
which is where the precision curve "ends".
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError


@dataclass
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ThresholdPoint:
    threshold: float
    precision: Optional[float]
    recall: float
    f1: Optional[float]


@dataclass
class ThresholdCurve:
    points: list[ThresholdPoint]
    auc: float


def _arrays(labels: Sequence[bool], scores: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError(f"labels ({y.shape}) and scores ({s.shape}) must align")
    return y, s


def confusion(labels: Sequence[bool], scores: Sequence[float],
              threshold: float) -> ConfusionMatrix:
    """Counts with predicted-true defined as score >= threshold."""
    y, s = _arrays(labels, scores)
    pred = s >= threshold
    return ConfusionMatrix(
        tp=int(np.sum(pred & y)),
        fp=int(np.sum(pred & ~y)),
        fn=int(np.sum(~pred & y)),
        tn=int(np.sum(~pred & ~y)),
    )


def precision_recall_f1(cm: ConfusionMatrix) -> tuple[Optional[float], float, Optional[float]]:
    """(precision, recall, F1); precision and F1 are None when tp+fp == 0."""
    precision = cm.tp / (cm.tp + cm.fp) if cm.tp + cm.fp > 0 else None
    recall = cm.tp / (cm.tp + cm.fn) if cm.tp + cm.fn > 0 else 0.0
    if precision is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def roc_auc(labels: Sequence[bool], scores: Sequence[float]) -> float:
    """Area under the ROC curve by trapezoidal integration.

    Tied scores are grouped per distinct threshold, which is the midrank
    convention: the result equals P(score+ > score-) + 0.5 * P(tie).
    """
    y, s = _arrays(labels, scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("ROC AUC needs at least one positive and one negative")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    area = 0.0
    tp = fp = 0
    i = 0
    while i < len(s_sorted):
        j = i
        d_tp = d_fp = 0
        while j < len(s_sorted) and s_sorted[j] == s_sorted[i]:
            if y_sorted[j]:
                d_tp += 1
            else:
                d_fp += 1
            j += 1
        # trapezoid over the tie block
        area += d_fp * (tp + tp + d_tp) / 2.0
        tp += d_tp
        fp += d_fp
        i = j
    return area / (n_pos * n_neg)


def threshold_sweep(labels: Sequence[bool], scores: Sequence[float],
                    step: float = 0.01) -> ThresholdCurve:
    """Precision / recall / F1 over a [0, 1] threshold grid, plus the AUC."""
    if not 0 < step <= 1:
        raise ValueError("step must be in (0, 1]")
    y, s = _arrays(labels, scores)
    n_grid = int(round(1.0 / step))
    points = []
    for k in range(n_grid + 1):
        t = k * step
        p, r, f1 = precision_recall_f1(confusion(y, s, t))
        points.append(ThresholdPoint(t, p, r, f1))
    return ThresholdCurve(points, roc_auc(y, s))


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D of equal length")
    if len(x) < 2:
        raise DataError("correlation needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    vx = float(np.dot(dx, dx))
    vy = float(np.dot(dy, dy))
    if vx == 0 or vy == 0:
        raise DataError("correlation undefined for zero-variance input")
    return float(np.dot(dx, dy) / np.sqrt(vx * vy))


def serialize_curve(curve: ThresholdCurve) -> str:
    """Plot-ready CSV: threshold,precision,recall,f1 rows and an auc footer."""
    lines = ["threshold,precision,recall,f1"]
    for pt in curve.points:
        precision = "" if pt.precision is None else repr(pt.precision)
        f1 = "" if pt.f1 is None else repr(pt.f1)
        lines.append(f"{pt.threshold:.2f},{precision},{repr(pt.recall)},{f1}")
    lines.append(f"auc,{repr(curve.auc)}")
    return "\n".join(lines) + "\n"
