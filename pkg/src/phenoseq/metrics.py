"""Confusion-matrix accumulation and macro classification metrics.

Class order is fixed to (BF, C, YS): before-flowering stress, control, and
young-seedling stress. Rows of the matrix are actual classes, columns are
predictions. Metrics with a zero denominator are reported as ``None`` rather
than silently coerced to 0 or 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CLASSES",
    "ConfusionMatrix",
    "MetricSet",
    "compute_metrics",
]

CLASSES = ("BF", "C", "YS")


class ConfusionMatrix:
    """C x C integer count matrix; rows = actual class, cols = predicted."""

    def __init__(self, classes=CLASSES, counts=None):
        self.classes = tuple(classes)
        n = len(self.classes)
        if counts is None:
            self.counts = np.zeros((n, n), dtype=np.int64)
        else:
            self.counts = np.asarray(counts, dtype=np.int64).copy()
            if self.counts.shape != (n, n):
                raise ValueError(f"counts shape {self.counts.shape} != ({n}, {n})")
            if (self.counts < 0).any():
                raise ValueError("confusion counts must be non-negative")

    def index(self, label) -> int:
        if isinstance(label, (int, np.integer)):
            if not 0 <= label < len(self.classes):
                raise ValueError(f"class index {label} out of range")
            return int(label)
        try:
            return self.classes.index(label)
        except ValueError:
            raise ValueError(f"unknown class {label!r}; expected one of {self.classes}") from None

    def accumulate(self, actual, predicted) -> "ConfusionMatrix":
        self.counts[self.index(actual), self.index(predicted)] += 1
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.classes != self.classes:
            raise ValueError("cannot merge confusion matrices with different class sets")
        self.counts += other.counts
        return self

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_normalized(self) -> np.ndarray:
        """Per-actual-class probabilities; rows with no samples become zeros."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(sums > 0, self.counts / np.maximum(sums, 1), 0.0)
        return p

    def write_csv(self, path, normalized: bool = False):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["actual\\predicted", *self.classes])
            data = self.row_normalized() if normalized else self.counts
            for name, row in zip(self.classes, data):
                writer.writerow([name, *row.tolist()])

    def __repr__(self):
        return f"ConfusionMatrix(classes={self.classes}, counts={self.counts.tolist()})"


@dataclass
class MetricSet:
    """Macro metrics; a field is None when its denominator is zero.

    ``average_accuracy`` is the per-class mean of (Tp+Tn)/total;
    ``overall_accuracy`` is trace/total. They coincide only for two classes,
    so both are reported under distinct names.
    """

    average_accuracy: float | None
    macro_sensitivity: float | None
    macro_specificity: float | None
    macro_precision: float | None
    overall_accuracy: float | None

    def as_dict(self) -> dict:
        return {
            "acc": self.average_accuracy,
            "se": self.macro_sensitivity,
            "sp": self.macro_specificity,
            "pre": self.macro_precision,
            "overall_acc": self.overall_accuracy,
        }


def _mean_or_none(values) -> float | None:
    vals = list(values)
    if any(v is None for v in vals):
        return None
    return float(np.mean(vals))


def compute_metrics(cm: ConfusionMatrix) -> MetricSet:
    """Unweighted class means of per-class binary accuracy/recall/specificity/precision."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    per_acc, per_se, per_sp, per_pre = [], [], [], []
    for i in range(len(cm.classes)):
        tp = counts[i, i]
        fn = counts[i, :].sum() - tp
        fp = counts[:, i].sum() - tp
        tn = total - tp - fn - fp
        per_acc.append((tp + tn) / total)
        per_se.append(tp / (tp + fn) if tp + fn > 0 else None)
        per_sp.append(tn / (tn + fp) if tn + fp > 0 else None)
        per_pre.append(tp / (tp + fp) if tp + fp > 0 else None)
    return MetricSet(
        average_accuracy=_mean_or_none(per_acc),
        macro_sensitivity=_mean_or_none(per_se),
        macro_specificity=_mean_or_none(per_sp),
        macro_precision=_mean_or_none(per_pre),
        overall_accuracy=float(np.trace(counts) / total),
    )
