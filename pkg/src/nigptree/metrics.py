"""Classification metrics in the reporting convention of the CLI."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


class UndefinedMetricWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: np.ndarray

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
            "f1": self.f1.tolist(),
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion.tolist(),
        }

    def format(self, class_names=None):
        C = self.confusion.shape[0]
        names = class_names or [str(c) for c in range(C)]
        width = max(6, max(len(n) for n in names))
        lines = [
            f"accuracy         {self.accuracy:.4f}",
            f"macro precision  {self.macro_precision:.4f}",
            f"macro recall     {self.macro_recall:.4f}",
            f"macro F1         {self.macro_f1:.4f}",
            "confusion (rows: true, columns: predicted)",
            " " * (width + 1) + " ".join(f"{n:>{width}}" for n in names),
        ]
        for name, row in zip(names, self.confusion):
            lines.append(f"{name:>{width}} " + " ".join(f"{v:>{width}d}" for v in row))
        return "\n".join(lines)


def _ratio(num, den, what):
    out = np.zeros_like(num, dtype=float)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    if not ok.all():
        warnings.warn(f"{what} undefined for classes {np.flatnonzero(~ok).tolist()}; set to 0",
                      UndefinedMetricWarning, stacklevel=3)
    return out


def compute_metrics(y_true, y_pred, n_classes):
    """Accuracy, per-class and macro-averaged precision/recall/F1, confusion matrix.

    A 0/0 ratio counts as 0 and emits an ``UndefinedMetricWarning``.
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size == 0:
        raise ValueError("y_true and y_pred must be non-empty vectors of equal length")
    for name, v in (("y_true", y_true), ("y_pred", y_pred)):
        if v.min() < 0 or v.max() >= n_classes:
            raise ValueError(f"{name} has labels outside [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(float)
    precision = _ratio(tp, confusion.sum(axis=0).astype(float), "precision")
    recall = _ratio(tp, confusion.sum(axis=1).astype(float), "recall")
    f1 = _ratio(2 * precision * recall, precision + recall, "F1")
    return Metrics(
        accuracy=float(tp.sum() / confusion.sum()),
        precision=precision,
        recall=recall,
        f1=f1,
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        confusion=confusion,
    )
