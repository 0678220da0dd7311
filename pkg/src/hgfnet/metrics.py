"""Confusion matrix and the three evaluation figures: overall accuracy,
average per-class accuracy, and Cohen's kappa."""

from __future__ import annotations

import numpy as np

from .errors import DataError


class ConfusionMatrix:
    """K x K integer counts; rows are true classes, columns predictions."""

    def __init__(self, counts: np.ndarray):
        counts = np.asarray(counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise DataError(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise DataError("confusion counts must be non-negative")
        self.counts = counts

    @property
    def num_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())


def confusion(true_labels, pred_labels, num_classes: int) -> ConfusionMatrix:
    """Count (true, predicted) pairs; labels run 1..K."""
    t = np.asarray(true_labels, dtype=np.int64)
    p = np.asarray(pred_labels, dtype=np.int64)
    if t.shape != p.shape:
        raise DataError(f"label arrays differ in length: {t.shape} vs {p.shape}")
    for arr, which in ((t, "true"), (p, "predicted")):
        if arr.size and (arr.min() < 1 or arr.max() > num_classes):
            raise DataError(f"{which} labels must lie in 1..{num_classes}")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (t - 1, p - 1), 1)
    return ConfusionMatrix(counts)


def scores(cm: ConfusionMatrix) -> dict:
    """OA, AA over classes present in the rows, Cohen's kappa, and the
    per-class accuracies (nan for absent classes)."""
    c = cm.counts.astype(np.float64)
    total = c.sum()
    if total == 0:
        raise DataError("confusion matrix is empty")
    oa = np.trace(c) / total
    row = c.sum(axis=1)
    col = c.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row > 0, np.diag(c) / row, np.nan)
    aa = float(np.nanmean(per_class))
    pe = float((row * col).sum() / (total * total))
    if pe >= 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - pe) / (1.0 - pe)
    return {
        "oa": float(oa),
        "aa": aa,
        "kappa": float(kappa),
        "per_class": [None if np.isnan(v) else float(v) for v in per_class],
        "confusion": cm.counts.tolist(),
    }
