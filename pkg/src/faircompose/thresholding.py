"""Score-to-label thresholds tuned for balanced accuracy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ThresholdError

DEFAULT_GRID = tuple(round(i / 100, 2) for i in range(1, 100))


@dataclass(frozen=True)
class ThresholdRule:
    """Predict favorable iff ``score >= threshold``."""

    threshold: float
    balanced_accuracy: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ThresholdError(f"threshold {self.threshold} outside [0, 1]")


def balanced_accuracy_curve(scores, labels, grid) -> np.ndarray:
    """Balanced accuracy of ``scores >= t`` for every ``t`` in ``grid``."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    neg = ~pos
    if not pos.any() or not neg.any():
        raise ThresholdError("threshold tuning needs both classes in the validation labels")
    grid = np.asarray(grid, dtype=float)
    predicted = scores[None, :] >= grid[:, None]
    tpr = predicted[:, pos].mean(axis=1)
    tnr = 1.0 - predicted[:, neg].mean(axis=1)
    return (tpr + tnr) / 2.0


def tune_threshold(scores_valid, labels_valid, grid=DEFAULT_GRID) -> ThresholdRule:
    """Grid member with the highest validation balanced accuracy; ties go to the smallest."""
    grid = sorted(float(t) for t in grid)
    if not grid:
        raise ThresholdError("threshold grid is empty")
    curve = balanced_accuracy_curve(scores_valid, labels_valid, grid)
    best = int(np.argmax(curve))  # first maximum = smallest threshold
    return ThresholdRule(threshold=grid[best], balanced_accuracy=float(curve[best]))


def apply_threshold(scores, rule: ThresholdRule | float) -> np.ndarray:
    t = rule.threshold if isinstance(rule, ThresholdRule) else float(rule)
    return (np.asarray(scores, dtype=float) >= t).astype(np.int64)
