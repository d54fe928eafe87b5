"""Group fairness and performance metrics.

``groups`` is the protected indicator with 1 = privileged; predictions and
labels use 1 = favorable. Every rate is a plain (unweighted) frequency.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import MetricError


def _arrays(*arrays):
    out = [np.asarray(a) for a in arrays]
    n = len(out[0])
    if any(len(a) != n for a in out):
        raise MetricError("input arrays differ in length")
    return out


def _rate(values, mask, what):
    if not mask.any():
        raise MetricError(f"{what} is empty")
    return float(np.mean(values[mask]))


def selection_rates(preds, groups) -> tuple[float, float]:
    """(unprivileged, privileged) favorable-prediction rates."""
    preds, groups = _arrays(preds, groups)
    return (
        _rate(preds, groups == 0, "unprivileged group"),
        _rate(preds, groups == 1, "privileged group"),
    )


def spd(preds, groups) -> float:
    unpriv, priv = selection_rates(preds, groups)
    return unpriv - priv


def di(preds, groups) -> float:
    """Disparate impact ratio; 0/0 is 1.0 and x/0 is +inf."""
    unpriv, priv = selection_rates(preds, groups)
    if priv == 0.0:
        return 1.0 if unpriv == 0.0 else math.inf
    return unpriv / priv


def group_tpr_fpr(preds, labels, groups, need_negatives=True):
    """Per-group (TPR, FPR) as ``{group: (tpr, fpr)}``. FPR is None when not requested."""
    preds, labels, groups = _arrays(preds, labels, groups)
    out = {}
    for g, name in ((0, "unprivileged"), (1, "privileged")):
        tpr = _rate(preds, (groups == g) & (labels == 1), f"{name} positive-label set")
        fpr = _rate(preds, (groups == g) & (labels == 0), f"{name} negative-label set") if need_negatives else None
        out[g] = (tpr, fpr)
    return out


def eod(preds, labels, groups) -> float:
    rates = group_tpr_fpr(preds, labels, groups, need_negatives=False)
    return rates[0][0] - rates[1][0]


def aod(preds, labels, groups) -> float:
    rates = group_tpr_fpr(preds, labels, groups)
    fpr_gap = rates[0][1] - rates[1][1]
    tpr_gap = rates[0][0] - rates[1][0]
    return (fpr_gap + tpr_gap) / 2.0


def accuracy(preds, labels) -> float:
    preds, labels = _arrays(preds, labels)
    if len(preds) == 0:
        raise MetricError("empty prediction vector")
    return float(np.mean(preds == labels))


def balanced_accuracy(preds, labels) -> float:
    preds, labels = _arrays(preds, labels)
    tpr = _rate(preds == 1, labels == 1, "positive-label set")
    tnr = _rate(preds == 0, labels == 0, "negative-label set")
    return (tpr + tnr) / 2.0


def average_ranks(values) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    boundaries = np.flatnonzero(np.diff(sorted_vals)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(values)]))
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores, labels = _arrays(scores, labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ROC AUC needs both classes")
    ranks = average_ranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def performance(preds, labels, scores=None) -> tuple[float, float, float]:
    """(accuracy, balanced accuracy, ROC AUC); AUC uses ``scores`` when given."""
    return (
        accuracy(preds, labels),
        balanced_accuracy(preds, labels),
        roc_auc(preds if scores is None else scores, labels),
    )


@dataclass
class MetricBundle:
    accuracy: float
    balanced_accuracy: float
    roc_auc: float
    spd: float
    di: float
    eod: float
    aod: float
    di_infinite: bool = False
    group_rates: dict = field(default_factory=dict)

    def scalars(self) -> dict[str, float]:
        d = asdict(self)
        d.pop("group_rates")
        d.pop("di_infinite")
        return d


def metric_bundle(preds, labels, groups, scores=None) -> MetricBundle:
    preds, labels, groups = _arrays(preds, labels, groups)
    acc, bacc, auc = performance(preds, labels, scores)
    rates = group_tpr_fpr(preds, labels, groups)
    sel = selection_rates(preds, groups)
    di_value = di(preds, groups)
    table = {
        name: {"selection_rate": sel[g], "tpr": rates[g][0], "fpr": rates[g][1]}
        for g, name in ((0, "unprivileged"), (1, "privileged"))
    }
    return MetricBundle(
        accuracy=acc,
        balanced_accuracy=bacc,
        roc_auc=auc,
        spd=sel[0] - sel[1],
        di=di_value,
        eod=rates[0][0] - rates[1][0],
        aod=((rates[0][1] - rates[1][1]) + (rates[0][0] - rates[1][0])) / 2.0,
        di_infinite=math.isinf(di_value),
        group_rates=table,
    )
