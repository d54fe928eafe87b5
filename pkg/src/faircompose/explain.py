"""LIME-style local surrogate explanations and the faithfulness metric."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import CONTINUOUS, TabularDataset
from .errors import ExplanationError, ParameterError

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class TrainStats:
    """What the perturbation sampler needs to know about the training split."""

    mean: np.ndarray
    std: np.ndarray
    kinds: tuple
    onehot_groups: tuple  # (source column, column indices)
    group_freqs: tuple  # one probability vector per one-hot group
    binary_freqs: dict  # column index -> P(value == 1) for standalone binary columns
    feature_names: tuple

    @classmethod
    def from_dataset(cls, ds: TabularDataset) -> "TrainStats":
        x = ds.features
        std = x.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        freqs = []
        for _, idx in ds.onehot_groups:
            counts = x[:, list(idx)].sum(axis=0)
            freqs.append(counts / counts.sum())
        grouped = {i for _, idx in ds.onehot_groups for i in idx}
        binary = {
            j: float(x[:, j].mean())
            for j, kind in enumerate(ds.feature_kinds)
            if kind != CONTINUOUS and j not in grouped
        }
        return cls(
            mean=x.mean(axis=0), std=std, kinds=ds.feature_kinds,
            onehot_groups=ds.onehot_groups, group_freqs=tuple(freqs),
            binary_freqs=binary, feature_names=ds.feature_names,
        )


@dataclass
class Explanation:
    instance: int
    features: list  # [(name, weight)] sorted by |weight| descending
    intercept: float
    r2: float
    seed: int
    feature_index: list = field(default_factory=list)
    prediction: float = float("nan")


def instance_seed(run_seed: int, instance_id: int) -> int:
    """Sub-seed for one explained instance, independent of processing order."""
    return int(np.random.SeedSequence([int(run_seed), int(instance_id)]).generate_state(1)[0])


def _sample(instance, stats: TrainStats, num_samples, rng):
    d = len(instance)
    samples = np.tile(instance, (num_samples, 1)).astype(float)
    cont = np.array([k == CONTINUOUS for k in stats.kinds])
    noise = rng.standard_normal((num_samples, d))
    samples[:, cont] += noise[:, cont] * stats.std[cont]
    for (_, idx), freq in zip(stats.onehot_groups, stats.group_freqs):
        idx = list(idx)
        picks = rng.choice(len(idx), size=num_samples, p=freq)
        block = np.zeros((num_samples, len(idx)))
        block[np.arange(num_samples), picks] = 1.0
        samples[:, idx] = block
    for j, p in sorted(stats.binary_freqs.items()):
        samples[:, j] = (rng.random(num_samples) < p).astype(float)
    # the instance itself is always the first sample
    samples[0] = instance
    return samples


def interpretable(samples, instance, stats: TrainStats) -> np.ndarray:
    """Surrogate inputs: standardized values for continuous columns, and for
    every other column an indicator of matching the explained instance."""
    cont = np.array([k == CONTINUOUS for k in stats.kinds])
    same = (samples == instance).astype(float)
    return np.where(cont, (samples - stats.mean) / stats.std, same)


def weighted_ridge(x, y, sample_weight, alpha=1.0):
    """Ridge regression with an unpenalized intercept; returns (coef, intercept)."""
    w = np.asarray(sample_weight, dtype=float)
    total = w.sum()
    x_mean = w @ x / total
    y_mean = w @ y / total
    xc = x - x_mean
    yc = y - y_mean
    gram = xc.T @ (w[:, None] * xc) + alpha * np.eye(x.shape[1])
    coef = np.linalg.solve(gram, xc.T @ (w * yc))
    return coef, float(y_mean - x_mean @ coef)


def lime_explain(
    score_fn: ScoreFn,
    instance,
    stats: TrainStats,
    num_samples: int = 5000,
    kernel_width: float | None = None,
    top_k: int = 10,
    seed: int = 0,
    instance_id: int = 0,
    ridge: float = 1.0,
) -> Explanation:
    """Explain ``score_fn`` around ``instance`` with a kernel-weighted ridge surrogate.

    Continuous features are perturbed with Gaussian noise scaled by the
    training std; one-hot groups and binary columns are resampled from
    training frequencies. The surrogate regresses the model score on the
    representation from :func:`interpretable`, and samples are weighted by
    ``exp(-dist^2 / width^2)`` with distances measured in that representation.
    """
    instance = np.asarray(instance, dtype=float)
    d = len(instance)
    if num_samples < 2:
        raise ParameterError("LIME needs at least two samples")
    width = 0.75 * math.sqrt(d) if kernel_width is None else float(kernel_width)
    rng = np.random.default_rng(seed)
    samples = _sample(instance, stats, num_samples, rng)

    scaled = interpretable(samples, instance, stats)
    dist2 = np.sum((scaled - scaled[0]) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        kernel = np.exp(-dist2 / width ** 2)
    if not np.isfinite(kernel.sum()) or kernel.sum() <= 0.0:
        raise ExplanationError(f"all kernel weights are zero; kernel width {width} is too small")

    target = np.asarray(score_fn(samples), dtype=float)
    coef, intercept = weighted_ridge(scaled, target, kernel, alpha=ridge)

    fitted = intercept + scaled @ coef
    t_mean = kernel @ target / kernel.sum()
    ss_tot = kernel @ (target - t_mean) ** 2
    ss_res = kernel @ (target - fitted) ** 2
    r2 = 0.0 if ss_tot <= 1e-300 else float(1.0 - ss_res / ss_tot)

    k = min(top_k, d)
    order = sorted(range(d), key=lambda j: (-abs(coef[j]), j))[:k]
    return Explanation(
        instance=int(instance_id),
        features=[(stats.feature_names[j], float(coef[j])) for j in order],
        intercept=intercept,
        r2=r2,
        seed=int(seed),
        feature_index=order,
        prediction=float(target[0]),
    )


@dataclass
class FaithfulnessScore:
    value: float | None
    pairs: list  # [(weight, drop)]

    @property
    def defined(self) -> bool:
        return self.value is not None


def faithfulness(
    score_fn: ScoreFn,
    instance,
    explanation: Explanation,
    baseline,
    threshold: float = 0.5,
) -> FaithfulnessScore:
    """Correlation between attribution weights and the score drop from removing each feature.

    A feature is removed by setting it to its baseline (training mean). The
    drop is measured on the probability of the predicted class; attribution
    weights are flipped to that class too. Undefined when either side has
    zero variance.
    """
    instance = np.asarray(instance, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    idx = list(explanation.feature_index)
    if not idx:
        return FaithfulnessScore(None, [])
    perturbed = np.tile(instance, (len(idx) + 1, 1))
    for row, j in enumerate(idx, start=1):
        perturbed[row, j] = baseline[j]
    scores = np.asarray(score_fn(perturbed), dtype=float)
    sign = 1.0 if scores[0] >= threshold else -1.0
    drops = sign * (scores[0] - scores[1:])
    weights = sign * np.array([w for _, w in explanation.features], dtype=float)
    pairs = [(float(w), float(dr)) for w, dr in zip(weights, drops)]
    return FaithfulnessScore(pearson(weights, drops), pairs)


def pearson(a, b) -> float | None:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(np.unique(b)) < 2 or len(np.unique(a)) < 2:
        return None
    ac = a - a.mean()
    bc = b - b.mean()
    denom = math.sqrt(float(ac @ ac) * float(bc @ bc))
    if denom == 0.0:
        return None
    return float(np.clip(ac @ bc / denom, -1.0, 1.0))


def pick_explanation_instances(n_rows: int | TabularDataset, count: int = 10, seed: int = 0) -> list:
    """Sorted row ids drawn uniformly without replacement."""
    n = len(n_rows) if isinstance(n_rows, TabularDataset) else int(n_rows)
    if count > n:
        raise ParameterError(f"cannot pick {count} instances from {n} rows")
    if count < 0:
        raise ParameterError("instance count must be nonnegative")
    rng = np.random.default_rng(seed)
    return sorted(int(i) for i in rng.choice(n, size=count, replace=False))
