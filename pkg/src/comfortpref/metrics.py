"""Classification metrics for single-label multi-class predictions."""

from __future__ import annotations

from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import LengthMismatch


def _check(y_true: Sequence, y_pred: Sequence, class_set: Sequence | None) -> list:
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"y_true has {len(y_true)} items, y_pred has {len(y_pred)}")
    if len(y_true) == 0:
        raise LengthMismatch("cannot score empty predictions")
    if class_set is None:
        return sorted(set(y_true) | set(y_pred), key=str)
    classes = list(class_set)
    unknown = (set(y_true) | set(y_pred)) - set(classes)
    if unknown:
        raise ValueError(f"labels {sorted(map(str, unknown))} outside class set")
    return classes


def confusion_matrix(y_true: Sequence, y_pred: Sequence, class_set: Sequence | None = None) -> tuple[list, np.ndarray]:
    """Counts with true classes on rows and predicted classes on columns."""
    classes = _check(y_true, y_pred, class_set)
    pos = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        cm[pos[t], pos[p]] += 1
    return classes, cm


def micro_counts(cm: np.ndarray) -> tuple[int, int, int]:
    """Micro-aggregated (TP, FP, FN) summed over classes."""
    tp = int(np.trace(cm))
    fp = int(cm.sum(axis=0).sum() - tp)
    fn = int(cm.sum(axis=1).sum() - tp)
    return tp, fp, fn


def _f1_from_counts(tp: int, fp: int, fn: int) -> float:
    if tp == 0:
        return 0.0
    precision = Fraction(tp, tp + fp)
    recall = Fraction(tp, tp + fn)
    return float(2 * precision * recall / (precision + recall))


def f1_micro(y_true: Sequence, y_pred: Sequence, class_set: Sequence | None = None) -> float:
    """Harmonic mean of micro precision and recall.

    Computed in exact rationals, so for single-label predictions the result is
    the correctly rounded accuracy ``correct / n``.
    """
    _, cm = confusion_matrix(y_true, y_pred, class_set)
    return _f1_from_counts(*micro_counts(cm))


def accuracy(y_true: Sequence, y_pred: Sequence) -> float:
    if len(y_true) != len(y_pred):
        raise LengthMismatch("length mismatch")
    return sum(t == p for t, p in zip(y_true, y_pred)) / len(y_true)


def classification_summary(y_true: Sequence, y_pred: Sequence, class_set: Sequence | None = None) -> dict:
    classes, cm = confusion_matrix(y_true, y_pred, class_set)
    tp, fp, fn = micro_counts(cm)
    per_class = {}
    for i, c in enumerate(classes):
        predicted = int(cm[:, i].sum())
        actual = int(cm[i].sum())
        per_class[str(c)] = {
            "precision": cm[i, i] / predicted if predicted else 0.0,
            "recall": cm[i, i] / actual if actual else 0.0,
            "support": actual,
        }
        per_class[str(c)] = {k: (float(v) if k != "support" else v) for k, v in per_class[str(c)].items()}
    return {
        "f1_micro": _f1_from_counts(tp, fp, fn),
        "micro_precision": float(Fraction(tp, tp + fp)) if tp + fp else 0.0,
        "micro_recall": float(Fraction(tp, tp + fn)) if tp + fn else 0.0,
        "per_class": per_class,
        "labels": [str(c) for c in classes],
        "confusion": cm.tolist(),
    }
