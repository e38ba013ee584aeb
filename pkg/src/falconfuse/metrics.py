"""Multi-class evaluation metrics.

classification_report works in exact rational arithmetic internally and
converts to float at the edges, so it agrees bit-for-bit with any other
correctly rounded straight-from-definition implementation. Per-class
accuracy is one-vs-rest (TP+TN)/N; the macro row is the unweighted mean
of the class rows. ROC curves sweep thresholds over distinct scores
descending, with tied scores grouped into a single step, and AUC is the
trapezoidal area.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import DataError

METRIC_KEYS = ("accuracy", "precision", "recall", "f1")


def confusion_matrix(true_labels: Sequence[int], pred_labels: Sequence[int], k: int) -> np.ndarray:
    """K×K counts; rows are true classes, columns predicted classes."""
    true_arr = np.asarray(true_labels, dtype=np.int64)
    pred_arr = np.asarray(pred_labels, dtype=np.int64)
    if true_arr.shape != pred_arr.shape:
        raise DataError(
            f"label lists disagree in length: {true_arr.shape} vs {pred_arr.shape}"
        )
    for name, arr in (("true", true_arr), ("pred", pred_arr)):
        if arr.size and (arr.min() < 0 or arr.max() >= k):
            raise DataError(f"{name} label out of range [0, {k})")
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (true_arr, pred_arr), 1)
    return cm


def classification_report(confusion: np.ndarray) -> Tuple[List[Dict[str, float]], Dict[str, float]]:
    """Per-class and macro accuracy/precision/recall/F1 from a confusion matrix.

    Zero-denominator conventions: precision/recall are 0 when their
    denominator is 0, F1 is 0 when precision+recall is 0.
    """
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise DataError(f"confusion matrix must be square, got {cm.shape}")
    if (cm < 0).any():
        raise DataError("confusion matrix entries must be nonnegative")
    k = cm.shape[0]
    total = int(cm.sum())
    if total == 0:
        raise DataError("confusion matrix is all zeros")
    per_class: List[Dict[str, float]] = []
    sums = {key: Fraction(0) for key in METRIC_KEYS}
    for c in range(k):
        tp = int(cm[c, c])
        rowsum = int(cm[c, :].sum())
        colsum = int(cm[:, c].sum())
        tn = total - rowsum - colsum + tp
        precision = Fraction(tp, colsum) if colsum else Fraction(0)
        recall = Fraction(tp, rowsum) if rowsum else Fraction(0)
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else Fraction(0)
        )
        accuracy = Fraction(tp + tn, total)
        row = {"accuracy": accuracy, "precision": precision, "recall": recall, "f1": f1}
        for key in METRIC_KEYS:
            sums[key] += row[key]
        per_class.append({key: float(row[key]) for key in METRIC_KEYS})
    macro = {key: float(sums[key] / k) for key in METRIC_KEYS}
    return per_class, macro


def roc_curve(scores: Sequence[float], truths: Sequence[int]) -> Tuple[List[Tuple[float, float]], float]:
    """One-vs-rest ROC points from (0,0) to (1,1) plus trapezoidal AUC."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truths, dtype=np.int64)
    if s.shape != t.shape or s.ndim != 1:
        raise DataError("scores and truths must be 1-D and equal length")
    n_pos = int((t == 1).sum())
    n_neg = int((t == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError(
            f"ROC needs both classes present, got {n_pos} positives and {n_neg} negatives"
        )
    order = np.argsort(-s, kind="stable")
    s, t = s[order], t[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            tp += int(t[j] == 1)
            fp += int(t[j] == 0)
            j += 1
        points.append((fp / n_neg, tp / n_pos))
        i = j
    fpr = np.array([p[0] for p in points])
    tpr = np.array([p[1] for p in points])
    auc = float(np.trapezoid(tpr, fpr))
    return points, auc
