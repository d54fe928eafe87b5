"""Post-processing: reject option classification, calibrated equalized odds, group thresholds.

All three are fitted on validation scores and return hard decisions. Each
also exposes ``relaxed_scores``: the incoming score where the decision rule
leaves it alone, and 0/1 (or the replacement score) where it intervenes.
Explanations after a post-processing stage are computed on that function.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import FitError, ParameterError
from ..metrics import di as disparate_impact
from ..thresholding import DEFAULT_GRID
from .inproc import ConstraintKind

ROC_MARGINS = tuple(round(i / 100, 2) for i in range(1, 26))
P_GRID = tuple(round(i / 100, 2) for i in range(0, 101))


def _check_validation(scores, labels, groups):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if not (len(scores) == len(labels) == len(groups)):
        raise ParameterError("scores, labels and groups must align")
    for g in (0, 1):
        for y in (0, 1):
            if not np.any((groups == g) & (labels == y)):
                raise FitError(f"validation data lacks rows with protected={g}, label={y}")
    return scores, labels, groups


def _balanced_accuracy(preds, labels):
    """Balanced accuracy along the last axis of ``preds``."""
    pos = labels == 1
    tpr = preds[..., pos].mean(axis=-1)
    tnr = 1.0 - preds[..., ~pos].mean(axis=-1)
    return (tpr + tnr) / 2.0


# -- reject option classification -------------------------------------------------

ROC_METRICS = {
    # name -> (default bounds, evaluation on (preds, labels, groups))
    "DI": ((0.8, 1.25), None),
    "SPD": ((-0.05, 0.05), None),
    "AOD": ((-0.05, 0.05), None),
}


@dataclass(frozen=True)
class RocBand:
    threshold: float
    margin: float
    metric: str = "DI"
    bounds: tuple = (0.8, 1.25)
    metric_value: float = float("nan")
    balanced_accuracy: float = float("nan")
    feasible: bool = True

    def __post_init__(self):
        if not 0.0 <= self.margin < 0.5:
            raise ParameterError(f"ROC margin must be in [0, 0.5), got {self.margin}")
        if self.threshold - self.margin > 1.0 or self.threshold + self.margin < 0.0:
            raise ParameterError("ROC band does not intersect [0, 1]")

    @property
    def flags(self) -> list:
        return [] if self.feasible else ["roc_metric_bounds_unmet"]

    def in_band(self, scores) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        return (scores >= self.threshold - self.margin) & (scores <= self.threshold + self.margin)

    def relaxed_scores(self, scores, groups) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        return np.where(self.in_band(scores), (np.asarray(groups) == 0).astype(float), scores)


def roc_apply(scores, groups, band: RocBand) -> np.ndarray:
    """Favorable for the unprivileged and unfavorable for the privileged inside the band."""
    scores = np.asarray(scores, dtype=float)
    groups = np.asarray(groups)
    outside = (scores >= band.threshold).astype(np.int64)
    inside = (groups == 0).astype(np.int64)
    return np.where(band.in_band(scores), inside, outside)


def _roc_metric_values(preds, labels, groups, metric):
    """Metric for every row of a (candidates, n) decision matrix."""
    unpriv = groups == 0
    sel_u = preds[:, unpriv].mean(axis=1)
    sel_p = preds[:, ~unpriv].mean(axis=1)
    if metric == "DI":
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(sel_p > 0, sel_u / np.where(sel_p > 0, sel_p, 1.0), np.where(sel_u > 0, np.inf, 1.0))
        return out
    if metric == "SPD":
        return sel_u - sel_p
    if metric == "AOD":
        gaps = 0.0
        for y in (0, 1):
            cell_u = unpriv & (labels == y)
            cell_p = ~unpriv & (labels == y)
            gaps = gaps + preds[:, cell_u].mean(axis=1) - preds[:, cell_p].mean(axis=1)
        return gaps / 2.0
    raise ParameterError(f"unknown ROC metric {metric!r}")


def roc_candidates(scores, labels, groups, thresholds=DEFAULT_GRID, margins=ROC_MARGINS, metric="DI"):
    """Metric value and balanced accuracy for every (threshold, margin) pair, margin-major."""
    scores, labels, groups = _check_validation(scores, labels, groups)
    pairs = [(float(t), float(m)) for m in margins for t in thresholds]
    if not pairs:
        raise ParameterError("ROC grid is empty")
    t = np.array([p[0] for p in pairs])[:, None]
    m = np.array([p[1] for p in pairs])[:, None]
    s = scores[None, :]
    band = (s >= t - m) & (s <= t + m)
    preds = np.where(band, (groups == 0)[None, :], s >= t).astype(float)
    return pairs, _roc_metric_values(preds, labels, groups, metric), _balanced_accuracy(preds, labels)


def roc_fit(
    scores_valid,
    labels_valid,
    groups_valid,
    thresholds=DEFAULT_GRID,
    margins=ROC_MARGINS,
    metric: str = "DI",
    bounds=None,
) -> RocBand:
    """Exhaustive band search.

    Among pairs whose validation metric lies within ``bounds`` the highest
    balanced accuracy wins, ties going to the smallest margin and then the
    smallest threshold. Without a qualifying pair, the pair whose metric is
    closest to its fair value (1 for DI, 0 otherwise) is returned, flagged.
    """
    metric = metric.upper()
    if metric not in ROC_METRICS:
        raise ParameterError(f"unknown ROC metric {metric!r}; choose from {sorted(ROC_METRICS)}")
    bounds = tuple(bounds) if bounds is not None else ROC_METRICS[metric][0]
    pairs, values, bacc = roc_candidates(
        scores_valid, labels_valid, groups_valid, sorted(thresholds), sorted(margins), metric
    )
    ok = (values >= bounds[0]) & (values <= bounds[1])
    if ok.any():
        # pairs are ordered (margin, threshold) ascending, so argmax keeps the tie-break
        idx = int(np.argmax(np.where(ok, bacc, -np.inf)))
        feasible = True
    else:
        target = 1.0 if metric == "DI" else 0.0
        idx = int(np.argmin(np.abs(values - target)))
        feasible = False
    t, m = pairs[idx]
    return RocBand(
        threshold=t, margin=m, metric=metric, bounds=bounds,
        metric_value=float(values[idx]), balanced_accuracy=float(bacc[idx]), feasible=feasible,
    )


# -- calibrated equalized odds ----------------------------------------------------

COST_MODES = ("fpr", "fnr", "weighted")


@dataclass(frozen=True)
class CeoMix:
    """Per-group probability of replacing a score with the group base rate.

    Mixing is derandomized: in group g the rows whose score lies within
    ``radius[g]`` of the base rate are replaced, where the radius covers the
    ``p_g`` fraction of validation rows closest to the base rate.
    """

    p_priv: float
    p_unpriv: float
    base_rate_priv: float
    base_rate_unpriv: float
    radius_priv: float
    radius_unpriv: float
    cost_mode: str = "weighted"
    threshold: float = 0.5
    cost_gap: float = 0.0
    error: float = 0.0
    flags: tuple = ()

    def __post_init__(self):
        for name in ("p_priv", "p_unpriv", "base_rate_priv", "base_rate_unpriv"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name} must be in [0, 1], got {value}")

    def mixed_scores(self, scores, groups) -> np.ndarray:
        scores = np.asarray(scores, dtype=float)
        groups = np.asarray(groups)
        out = scores.copy()
        for g, p, rate, radius in (
            (1, self.p_priv, self.base_rate_priv, self.radius_priv),
            (0, self.p_unpriv, self.base_rate_unpriv, self.radius_unpriv),
        ):
            if p <= 0.0:
                continue
            flagged = (groups == g) & (np.abs(scores - rate) <= radius)
            out[flagged] = rate
        return out

    def relaxed_scores(self, scores, groups) -> np.ndarray:
        return self.mixed_scores(scores, groups)


def ceodds_apply(scores, groups, mix: CeoMix) -> np.ndarray:
    return (mix.mixed_scores(scores, groups) >= mix.threshold).astype(np.int64)


def _group_curves(scores, labels, rate, threshold, fnr_weight):
    """Costs and error counts for a single group as the flagged fraction sweeps P_GRID."""
    n = len(scores)
    order = np.argsort(np.abs(scores - rate), kind="mergesort")
    s = scores[order]
    y = labels[order]
    neg = y == 0
    n_neg = max(int(neg.sum()), 1)
    n_pos = max(int((~neg).sum()), 1)
    # prefix sums over the flagged (closest) rows
    flag_s_neg = np.concatenate(([0.0], np.cumsum(np.where(neg, s, 0.0))))
    flag_s_pos = np.concatenate(([0.0], np.cumsum(np.where(~neg, s, 0.0))))
    flag_neg = np.concatenate(([0], np.cumsum(neg)))
    flag_pos = np.concatenate(([0], np.cumsum(~neg)))
    wrong_orig = ((s >= threshold).astype(int) != y).astype(int)
    wrong_flag = ((rate >= threshold) != y).astype(int)
    flag_wrong_orig = np.concatenate(([0], np.cumsum(wrong_orig)))
    flag_wrong_new = np.concatenate(([0], np.cumsum(wrong_flag)))

    ks = np.array([int(round(p * n)) for p in P_GRID])
    gen_fpr = (np.sum(np.where(neg, s, 0.0)) - flag_s_neg[ks] + rate * flag_neg[ks]) / n_neg
    gen_fnr = (np.sum(np.where(~neg, 1.0 - s, 0.0)) - (flag_pos[ks] - flag_s_pos[ks]) + (1.0 - rate) * flag_pos[ks]) / n_pos
    cost = {"fpr": gen_fpr, "fnr": gen_fnr, "weighted": fnr_weight * gen_fnr + (1.0 - fnr_weight) * gen_fpr}
    errors = wrong_orig.sum() - flag_wrong_orig[ks] + flag_wrong_new[ks]
    dist = np.abs(s - rate)
    radius = np.array([-1.0 if k == 0 else (np.inf if k == n else float(dist[k - 1])) for k in ks])
    return cost, errors, radius


def ceodds_fit(
    scores_valid,
    labels_valid,
    groups_valid,
    cost_mode: str = "weighted",
    threshold: float = 0.5,
    tol: float = 0.01,
    fnr_weight: float = 0.5,
    calibration_tol: float = 0.1,
) -> CeoMix:
    """Grid search over per-group mixing rates (0, 0.01, ..., 1).

    Pairs whose generalized cost gap is at most ``tol`` are feasible; the
    feasible pair with the fewest validation errors wins (ties: smallest
    ``p_priv``, then smallest ``p_unpriv``). No feasible pair is a fit error.
    """
    if cost_mode not in COST_MODES:
        raise ParameterError(f"unknown cost mode {cost_mode!r}; choose from {COST_MODES}")
    scores, labels, groups = _check_validation(scores_valid, labels_valid, groups_valid)
    flags = []
    curves = {}
    rates = {}
    for g in (1, 0):
        m = groups == g
        rates[g] = float(labels[m].mean())
        if abs(float(scores[m].mean()) - rates[g]) > calibration_tol:
            flags.append("ceodds_calibration_warning")
        curves[g] = _group_curves(scores[m], labels[m], rates[g], threshold, fnr_weight)
    flags = sorted(set(flags))

    cost_p, err_p, rad_p = curves[1]
    cost_u, err_u, rad_u = curves[0]
    gap = np.abs(cost_p[cost_mode][:, None] - cost_u[cost_mode][None, :])
    errors = err_p[:, None] + err_u[None, :]
    feasible = gap <= tol
    if not feasible.any():
        raise FitError(
            f"CEOdds could not equalize {cost_mode} cost within {tol} on the mixing grid "
            f"(smallest gap {gap.min():.4f})"
        )
    masked = np.where(feasible, errors, np.iinfo(np.int64).max)
    i, j = np.unravel_index(int(np.argmin(masked)), masked.shape)
    return CeoMix(
        p_priv=P_GRID[i],
        p_unpriv=P_GRID[j],
        base_rate_priv=rates[1],
        base_rate_unpriv=rates[0],
        radius_priv=float(rad_p[i]),
        radius_unpriv=float(rad_u[j]),
        cost_mode=cost_mode,
        threshold=float(threshold),
        cost_gap=float(gap[i, j]),
        error=float(errors[i, j] / len(labels)),
        flags=tuple(flags),
    )


# -- group-specific thresholds ----------------------------------------------------


@dataclass(frozen=True)
class GroupThresholds:
    t_priv: float
    t_unpriv: float
    constraint: ConstraintKind = ConstraintKind.DEMOGRAPHIC_PARITY
    gap: float = 0.0
    balanced_accuracy: float = float("nan")
    feasible: bool = True
    reference_threshold: float = 0.5

    def __post_init__(self):
        for t in (self.t_priv, self.t_unpriv):
            if not 0.0 <= t <= 1.0:
                raise ParameterError(f"group threshold {t} outside [0, 1]")

    @property
    def flags(self) -> list:
        return [] if self.feasible else ["threshopt_infeasible_fallback"]

    def relaxed_scores(self, scores, groups) -> np.ndarray:
        """Decisions where they differ from ``score >= reference_threshold``, scores elsewhere."""
        scores = np.asarray(scores, dtype=float)
        new = threshopt_apply(scores, groups, self)
        old = (scores >= self.reference_threshold).astype(np.int64)
        return np.where(new != old, new.astype(float), scores)


def threshopt_apply(scores, groups, rule: GroupThresholds) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    t = np.where(np.asarray(groups) == 1, rule.t_priv, rule.t_unpriv)
    return (scores >= t).astype(np.int64)


def threshopt_table(scores, labels, groups, grid=DEFAULT_GRID, constraint=ConstraintKind.DEMOGRAPHIC_PARITY):
    """Gap and balanced accuracy for every (t_unpriv, t_priv) pair; rows index t_unpriv."""
    scores, labels, groups = _check_validation(scores, labels, groups)
    constraint = ConstraintKind.parse(constraint)
    grid = np.asarray(sorted(grid), dtype=float)
    stats = {}
    for g in (0, 1):
        m = groups == g
        pred = scores[m][None, :] >= grid[:, None]
        y = labels[m]
        stats[g] = {
            "sel": pred.sum(axis=1), "n": m.sum(),
            "tp": pred[:, y == 1].sum(axis=1), "fp": pred[:, y == 0].sum(axis=1),
            "pos": int((y == 1).sum()), "neg": int((y == 0).sum()),
        }
    u, p = stats[0], stats[1]
    if constraint is ConstraintKind.DEMOGRAPHIC_PARITY:
        gap = np.abs(u["sel"][:, None] / u["n"] - p["sel"][None, :] / p["n"])
    else:
        tpr_gap = np.abs(u["tp"][:, None] / u["pos"] - p["tp"][None, :] / p["pos"])
        fpr_gap = np.abs(u["fp"][:, None] / u["neg"] - p["fp"][None, :] / p["neg"])
        gap = np.maximum(tpr_gap, fpr_gap)
    tp = u["tp"][:, None] + p["tp"][None, :]
    fp = u["fp"][:, None] + p["fp"][None, :]
    n_pos = u["pos"] + p["pos"]
    n_neg = u["neg"] + p["neg"]
    bacc = (tp / n_pos + 1.0 - fp / n_neg) / 2.0
    return grid, gap, bacc


def threshopt_fit(
    scores_valid,
    labels_valid,
    groups_valid,
    constraint=ConstraintKind.DEMOGRAPHIC_PARITY,
    tol: float = 0.02,
    grid=DEFAULT_GRID,
    reference_threshold: float = 0.5,
) -> GroupThresholds:
    """Per-group thresholds maximizing validation balanced accuracy subject to ``gap <= tol``.

    Ties go to the smaller unprivileged threshold, then the smaller privileged
    one. If no pair is feasible the smallest-gap pair is returned, flagged.
    """
    constraint = ConstraintKind.parse(constraint)
    grid_arr, gap, bacc = threshopt_table(scores_valid, labels_valid, groups_valid, grid, constraint)
    feasible = gap <= tol
    if feasible.any():
        flat = int(np.argmax(np.where(feasible, bacc, -np.inf)))
        ok = True
    else:
        # smallest gap, then best balanced accuracy, then grid order
        order = np.lexsort((np.arange(gap.size), -bacc.ravel(), gap.ravel()))
        flat = int(order[0])
        ok = False
    i, j = np.unravel_index(flat, gap.shape)
    return GroupThresholds(
        t_priv=float(grid_arr[j]), t_unpriv=float(grid_arr[i]), constraint=constraint,
        gap=float(gap[i, j]), balanced_accuracy=float(bacc[i, j]), feasible=ok,
        reference_threshold=float(reference_threshold),
    )
