"""Macro F1 and unweighted (balanced) accuracy from hard predictions."""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .core import DataError


class LengthMismatch(DataError):
    pass


class UnknownLabel(DataError):
    pass


class EmptyInput(DataError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @classmethod
    def from_labels(cls, y_true: Sequence, y_pred: Sequence, positive: Hashable) -> "ConfusionMatrix":
        t = np.asarray(y_true, dtype=object) == positive
        p = np.asarray(y_pred, dtype=object) == positive
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)),
                   int(np.sum(~t & ~p)))

    def swapped(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.tn, self.fn, self.fp, self.tp)

    def f1_positive(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 0.0 if denom == 0 else 2 * self.tp / denom

    def recall_positive(self) -> float | None:
        support = self.tp + self.fn
        return None if support == 0 else self.tp / support


def _check(y_true, y_pred, labels):
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"y_true has {len(y_true)} labels, y_pred has {len(y_pred)}")
    if labels is None:
        labels = sorted(set(y_true) | set(y_pred), key=str)
        if len(labels) > 2:
            raise UnknownLabel(f"more than two classes present: {labels}")
    labels = list(labels)
    allowed = set(labels)
    stray = (set(y_true) | set(y_pred)) - allowed
    if stray:
        raise UnknownLabel(f"labels {sorted(map(str, stray))} not in {labels}")
    return y_true, y_pred, labels


def _per_class(y_true, y_pred, labels):
    return [ConfusionMatrix.from_labels(y_true, y_pred, lab) for lab in labels]


def macro_f1(y_true: Iterable, y_pred: Iterable, labels: Sequence | None = None) -> float:
    """Unweighted mean of per-class F1; a class with an empty denominator scores 0."""
    y_true, y_pred, labels = _check(y_true, y_pred, labels)
    if not labels:
        raise EmptyInput("no labels to score")
    return float(np.mean([cm.f1_positive() for cm in _per_class(y_true, y_pred, labels)]))


def unweighted_accuracy(y_true: Iterable, y_pred: Iterable, labels: Sequence | None = None) -> float:
    """Mean per-class recall over classes that occur in ``y_true``."""
    y_true, y_pred, labels = _check(y_true, y_pred, labels)
    recalls = [r for r in (cm.recall_positive() for cm in _per_class(y_true, y_pred, labels))
               if r is not None]
    if not recalls:
        raise EmptyInput("y_true is empty")
    return float(np.mean(recalls))


def plain_accuracy(y_true: Iterable, y_pred: Iterable) -> float:
    y_true, y_pred = list(y_true), list(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"y_true has {len(y_true)} labels, y_pred has {len(y_pred)}")
    if not y_true:
        raise EmptyInput("no predictions")
    return sum(a == b for a, b in zip(y_true, y_pred)) / len(y_true)


def classification_metrics(y_true: Iterable, y_pred: Iterable, labels: Sequence | None = None
                           ) -> dict[str, float]:
    y_true, y_pred = list(y_true), list(y_pred)
    return {
        "macro_f1": macro_f1(y_true, y_pred, labels),
        "unweighted_accuracy": unweighted_accuracy(y_true, y_pred, labels),
        "accuracy": plain_accuracy(y_true, y_pred),
    }


def aggregate_folds(per_fold: Sequence[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Mean and sample standard deviation of each metric across folds (not pooled)."""
    if not per_fold:
        raise EmptyInput("no fold results to aggregate")
    out = {}
    for key in per_fold[0]:
        values = [float(m[key]) for m in per_fold]
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        out[key] = {"mean": statistics.fmean(values), "std": std, "n": len(values)}
    return out


def as_percent(value: float) -> str:
    return f"{100 * value:.1f}"
