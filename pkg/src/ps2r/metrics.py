"""Confusion-matrix metrics: accuracy, support-weighted F1 and multiclass MCC."""
from __future__ import annotations

import csv
import io
from typing import Iterable, Sequence

import numpy as np


def accumulate(pairs: Iterable[tuple[int, int]], num_classes: int) -> np.ndarray:
    """C x C integer matrix; entry ``(t, p)`` counts true class t predicted as p."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    for t, p in pairs:
        if not (0 <= t < num_classes and 0 <= p < num_classes):
            raise ValueError(f"class index out of range in pair ({t}, {p}) for C={num_classes}")
        cm[t, p] += 1
    return cm


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError("confusion matrix must be square")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    if cm.sum() == 0:
        raise ValueError("confusion matrix is empty")
    return cm.astype(np.float64)


def accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def weighted_f1(cm) -> float:
    """Per-class F1 averaged with true-class support weights. F1 is 0 when P + R = 0."""
    cm = _check(cm)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(np.sum(support / cm.sum() * f1))


def mcc(cm) -> float:
    """Multiclass Matthews correlation (R_K statistic); 0 when undefined."""
    cm = _check(cm)
    c = np.trace(cm)
    s = cm.sum()
    p = cm.sum(axis=0)
    t = cm.sum(axis=1)
    num = c * s - p @ t
    den = (s * s - p @ p) * (s * s - t @ t)
    if den <= 0:
        return 0.0
    return float(num / np.sqrt(den))


def class_accuracy(cm) -> np.ndarray:
    """Recall per class; NaN for classes without support."""
    cm = np.asarray(cm, dtype=np.float64)
    support = cm.sum(axis=1)
    out = np.full(len(cm), np.nan)
    np.divide(np.diag(cm), support, out=out, where=support > 0)
    return out


def confusion_to_csv(cm, class_names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["true\\pred", *class_names])
    for name, row in zip(class_names, np.asarray(cm)):
        w.writerow([name, *(int(x) for x in row)])
    return buf.getvalue()


def confusion_from_csv(text: str) -> tuple[list[str], np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    names = rows[0][1:]
    cm = np.array([[int(x) for x in r[1:]] for r in rows[1:]], dtype=np.int64).reshape(len(names), -1)
    return names, cm
