"""In-processing reductions: exponentiated gradient and grid search.

Both reduce constrained classification to weighted classification. For
multipliers ``lam`` the Lagrangian assigns every row a cost difference
``c_i = cost(predict 1) - cost(predict 0)``; the base learner is then fit on
labels ``1[c_i < 0]`` with weights ``|c_i|``. Costs are scaled so that
``lam = 0`` gives back the original labels and instance weights exactly.

Members are evaluated as hard classifiers (``score >= 0.5``) when computing
training error and constraint violation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..data import TabularDataset
from ..errors import ConfigError, FitError, ParameterError
from ..models import ConstantClassifier, ModelFactory, ScoredClassifier


class ConstraintKind(str, Enum):
    DEMOGRAPHIC_PARITY = "DemographicParity"
    EQUALIZED_ODDS = "EqualizedOdds"

    @classmethod
    def parse(cls, value) -> "ConstraintKind":
        if isinstance(value, cls):
            return value
        key = str(value).replace("_", "").replace(" ", "").lower()
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ConfigError(f"unknown constraint {value!r}; choose DemographicParity or EqualizedOdds")


@dataclass(frozen=True)
class FairnessConstraint:
    kind: ConstraintKind = ConstraintKind.DEMOGRAPHIC_PARITY
    eps: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "kind", ConstraintKind.parse(self.kind))
        if self.eps < 0:
            raise ParameterError("constraint slack eps must be nonnegative")


def _rate(values, mask, what):
    if not mask.any():
        raise FitError(f"{what} is empty")
    return float(np.mean(values[mask]))


def constraint_violation(preds, labels, groups, constraint) -> float:
    """|SPD| for demographic parity, max(|TPR gap|, |FPR gap|) for equalized odds."""
    kind = constraint.kind if isinstance(constraint, FairnessConstraint) else ConstraintKind.parse(constraint)
    preds = np.asarray(preds, dtype=float)
    labels = np.asarray(labels)
    groups = np.asarray(groups)
    if kind is ConstraintKind.DEMOGRAPHIC_PARITY:
        return abs(_rate(preds, groups == 0, "unprivileged group") - _rate(preds, groups == 1, "privileged group"))
    gaps = []
    for y in (1, 0):
        gaps.append(
            _rate(preds, (groups == 0) & (labels == y), f"unprivileged label-{y} cell")
            - _rate(preds, (groups == 1) & (labels == y), f"privileged label-{y} cell")
        )
    return max(abs(g) for g in gaps)


class _Moment:
    """Constraint moments ``gamma_j(h)`` and their per-row cost terms.

    Constraint j compares the mean prediction of one conditioning event
    (group, or group within a label) against the whole event it refines.
    Demographic parity uses the unprivileged group; equalized odds uses the
    unprivileged group within each label, ordered (label 0, label 1).
    Moments are population (unweighted) means; instance weights only enter
    the error term, so reweighing changes what the learner trades off
    without redefining which predictions count as fair.
    """

    def __init__(self, ds: TabularDataset, kind: ConstraintKind):
        self.kind = kind
        unpriv = ds.protected == 0
        if kind is ConstraintKind.DEMOGRAPHIC_PARITY:
            events = [(unpriv, np.ones(len(ds), dtype=bool))]
        else:
            events = [(unpriv & (ds.labels == y), ds.labels == y) for y in (0, 1)]
        self.events = []
        for sub, whole in events:
            if not sub.any() or not (whole & ~sub).any():
                raise FitError("every constraint cell needs rows from both groups")
            self.events.append((sub, whole, int(sub.sum()), int(whole.sum())))
        # error is a weighted mean; costs are expressed in units of instance weight
        self.total_weight = float(ds.weights.sum())

    @property
    def size(self) -> int:
        return len(self.events)

    def gamma(self, h) -> np.ndarray:
        """Signed moments: E[h | sub] - E[h | whole]."""
        return np.array([h[sub].mean() - h[whole].mean() for sub, whole, _, _ in self.events])

    def cost_gradient(self, lam) -> np.ndarray:
        """Per-row derivative of ``sum_j lam_j * gamma_j`` times the total instance weight."""
        n = len(self.events[0][0])
        grad = np.zeros(n)
        for lam_j, (sub, whole, n_sub, n_whole) in zip(lam, self.events):
            if lam_j == 0.0:
                continue
            grad += lam_j * self.total_weight * (sub / n_sub - whole / n_whole)
        return grad


def _fit_cost_sensitive(factory: ModelFactory, ds: TabularDataset, moment: _Moment, lam) -> ScoredClassifier:
    y = ds.labels
    costs = ds.weights * (1.0 - 2.0 * y) + moment.cost_gradient(lam)
    targets = (costs < 0).astype(np.int64)
    weights = np.abs(costs)
    pos = weights[targets == 1].sum()
    neg = weights[targets == 0].sum()
    if pos <= 0 or neg <= 0:
        return ConstantClassifier(value=1.0 if pos > 0 else 0.0).fit(ds.features)
    return factory().fit(ds.features, targets, weights)


@dataclass
class ReductionModel:
    members: list
    weights: np.ndarray
    constraint: FairnessConstraint
    log: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    candidates: list = field(default_factory=list)

    @property
    def deterministic(self) -> bool:
        return int(np.sum(self.weights > 0)) == 1

    def score(self, x) -> np.ndarray:
        return reduction_score(self, x)


def reduction_score(model: ReductionModel, features) -> np.ndarray:
    """Mixture-weighted average of member scores (members with zero weight are skipped)."""
    features = np.asarray(features, dtype=float)
    out = np.zeros(len(features))
    for member, q in zip(model.members, model.weights):
        if q > 0:
            out += q * member.score(features)
    return out


def _evaluate(member, ds, moment):
    hard = (member.score(ds.features) >= 0.5).astype(float)
    w = ds.weights
    error = float(w @ (hard != ds.labels) / w.sum())
    return hard, error


def expgrad_fit(
    factory: ModelFactory,
    ds: TabularDataset,
    constraint: FairnessConstraint = FairnessConstraint(),
    max_rounds: int = 50,
    step_size: float = 2.0,
    bound: float = 100.0,
) -> ReductionModel:
    """Exponentiated-gradient reduction returning the uniform mixture of round learners.

    Round 1 best-responds to zero multipliers (the unconstrained weighted
    fit). Afterwards every signed constraint ``+gamma_j - eps`` and
    ``-gamma_j - eps`` keeps a log-weight ``theta``; each round adds
    ``step_size / bound`` times the mixture's violation of it, and the
    multipliers are ``bound * exp(theta) / (1 + sum(exp(theta)))``, which
    keeps them in [0, bound].
    """
    if max_rounds < 1:
        raise ParameterError("max_rounds must be at least 1")
    moment = _Moment(ds, constraint.kind)
    members, log = [], []
    preds_sum = np.zeros(len(ds))
    theta = np.zeros(2 * moment.size)
    eta = step_size / bound
    lam_pos = np.zeros(moment.size)
    lam_neg = np.zeros(moment.size)
    for t in range(1, max_rounds + 1):
        try:
            member = _fit_cost_sensitive(factory, ds, moment, lam_pos - lam_neg)
        except FitError as exc:
            raise FitError(f"ExpGrad round {t}: {exc}") from exc
        hard, error = _evaluate(member, ds, moment)
        members.append(member)
        preds_sum += hard
        mixture = preds_sum / t
        gamma = moment.gamma(mixture)
        signed = np.concatenate([gamma - constraint.eps, -gamma - constraint.eps])
        theta += eta * signed
        shift = max(0.0, float(theta.max()))
        e = np.exp(theta - shift)
        multipliers = bound * e / (math.exp(-shift) + e.sum())
        lam_pos, lam_neg = multipliers[: moment.size], multipliers[moment.size:]
        log.append(
            {
                "round": t,
                "member_error": error,
                "member_violation": float(np.max(np.abs(moment.gamma(hard)))),
                "mixture_violation": float(np.max(np.abs(gamma))),
                "multipliers": [float(v) for v in multipliers],
            }
        )
    weights = np.full(len(members), 1.0 / len(members))
    return ReductionModel(members=members, weights=weights, constraint=constraint, log=log)


def symmetric_log_grid(per_side: int, smallest: float = 0.01, largest: float = 2.0) -> tuple:
    """0 plus ``per_side`` log-spaced magnitudes on each side, ascending.

    The violation reacts most sharply to small multipliers, so the grid is
    dense near 0 and sparse toward the limit.
    """
    mags = np.geomspace(smallest, largest, per_side)
    return tuple(float(v) for v in np.concatenate([-mags[::-1], [0.0], mags]).round(12))


DEFAULT_GRID = symmetric_log_grid(20)  # demographic parity: 41 candidates
DEFAULT_GRID_EO = symmetric_log_grid(10)  # equalized odds: 21 x 21 candidates


def default_grid(kind) -> tuple:
    return DEFAULT_GRID_EO if ConstraintKind.parse(kind) is ConstraintKind.EQUALIZED_ODDS else DEFAULT_GRID


def gridsearch_fit(
    factory: ModelFactory,
    ds: TabularDataset,
    constraint: FairnessConstraint = FairnessConstraint(),
    grid=None,
) -> ReductionModel:
    """Grid-search reduction returning one deterministic member.

    Demographic parity has one multiplier per grid value; equalized odds
    uses the Cartesian product of the grid for its two label cells. The
    default grid depends on the constraint (see :func:`default_grid`). Among
    candidates whose training violation is at most ``eps`` the lowest
    weighted error wins (first in grid order on ties). When none is
    feasible the least-violating candidate is returned and flagged.
    """
    grid = [float(g) for g in (default_grid(constraint.kind) if grid is None else grid)]
    if not grid:
        raise ParameterError("GridSearch multiplier grid is empty")
    moment = _Moment(ds, constraint.kind)
    if moment.size == 1:
        vectors = [(g,) for g in grid]
    else:
        vectors = [(a, b) for a in grid for b in grid]

    members, table = [], []
    for lam in vectors:
        member = _fit_cost_sensitive(factory, ds, moment, np.array(lam))
        hard, error = _evaluate(member, ds, moment)
        violation = constraint_violation(hard, ds.labels, ds.protected, constraint)
        members.append(member)
        table.append({"multipliers": list(lam), "error": error, "violation": violation})

    chosen, flags = select_candidate(table, constraint.eps)
    weights = np.zeros(len(members))
    weights[chosen] = 1.0
    return ReductionModel(
        members=members, weights=weights, constraint=constraint, candidates=table, flags=flags,
        log=[{"selected": chosen, **table[chosen]}],
    )


def select_candidate(table, eps) -> tuple[int, list]:
    feasible = [i for i, row in enumerate(table) if row["violation"] <= eps]
    if feasible:
        return min(feasible, key=lambda i: (table[i]["error"], i)), []
    best = min(range(len(table)), key=lambda i: (table[i]["violation"], table[i]["error"], i))
    return best, ["gridsearch_infeasible_fallback"]
