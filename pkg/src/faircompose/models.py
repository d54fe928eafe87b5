"""Weighted binary classifiers sharing a fit/score contract.

All classifiers accept nonnegative per-instance weights and return scores in
[0, 1] from ``score``. ``make_model(kind, params)`` builds an unfitted model;
unknown kinds or hyperparameter names raise :class:`ConfigError`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FitError


def _check_fit_inputs(x, y, w):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    w = np.ones(len(y)) if w is None else np.asarray(w, dtype=float)
    if x.ndim != 2 or len(x) != len(y) or len(w) != len(y):
        raise FitError("features, labels and weights must align")
    if (w < 0).any() or not np.isfinite(w).all():
        raise FitError("weights must be finite and nonnegative")
    if not np.isin(y, (0, 1)).all():
        raise FitError("labels must be 0/1")
    pos = w[y == 1].sum()
    neg = w[y == 0].sum()
    if pos <= 0 or neg <= 0:
        raise FitError("training data must contain both classes with positive weight")
    return x, y.astype(float), w


class ScoredClassifier:
    kind = "base"
    defaults: dict = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ConfigError(f"unknown hyperparameters for {self.kind}: {sorted(unknown)}")
        self.params = {**self.defaults, **params}
        self.fitted = False

    def fit(self, x, y, w=None):
        raise NotImplementedError

    def score(self, x) -> np.ndarray:
        raise NotImplementedError

    def _require_fitted(self):
        if not self.fitted:
            raise FitError(f"{self.kind} model used before fit")

    def __repr__(self):
        return f"{type(self).__name__}({self.params})"


class ConstantClassifier(ScoredClassifier):
    """Scores every row with the same value; used when a cost-sensitive subproblem is one-sided."""

    kind = "constant"
    defaults = {"value": 0.5}

    def fit(self, x, y=None, w=None):
        self.fitted = True
        return self

    def score(self, x):
        self._require_fitted()
        return np.full(len(np.asarray(x)), float(self.params["value"]))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_loss_grad(params, x, y, w, l2):
    """Weighted logistic loss summed over rows, plus ``l2 / 2 * ||coef||^2``.

    ``params`` is ``[intercept, *coef]``; the intercept is not penalized.
    """
    z = params[0] + x @ params[1:]
    # log(1 + e^z) - y z, computed stably
    loss_terms = np.logaddexp(0.0, z) - y * z
    loss = float(w @ loss_terms) + 0.5 * l2 * float(params[1:] @ params[1:])
    resid = w * (_sigmoid(z) - y)
    grad = np.empty_like(params)
    grad[0] = resid.sum()
    grad[1:] = x.T @ resid + l2 * params[1:]
    return loss, grad


class LogisticRegression(ScoredClassifier):
    """L2-regularized logistic regression fit by gradient descent.

    Each step starts from the Barzilai-Borwein step length and backtracks
    until the loss is sufficiently below the largest of the last
    ``memory`` accepted losses (a non-monotone Armijo test).
    """

    kind = "logistic"
    defaults = {"l2_strength": 1.0, "max_iters": 1000, "tolerance": 1e-6, "memory": 10, "seed": 0}

    def fit(self, x, y, w=None):
        x, y, w = _check_fit_inputs(x, y, w)
        l2 = float(self.params["l2_strength"])
        tol = float(self.params["tolerance"])
        theta = np.zeros(x.shape[1] + 1)
        loss, grad = logistic_loss_grad(theta, x, y, w, l2)
        recent = [loss]
        # 1 / Lipschitz bound of the gradient as the first step
        step = 1.0 / (l2 + float(w.sum()) * (1.0 + np.max(np.sum(x * x, axis=1), initial=0.0)) / 4.0)
        n_iter = 0
        while n_iter < int(self.params["max_iters"]) and np.max(np.abs(grad)) >= tol:
            n_iter += 1
            gg = float(grad @ grad)
            reference = max(recent)
            while True:
                cand = theta - step * grad
                cand_loss, cand_grad = logistic_loss_grad(cand, x, y, w, l2)
                if cand_loss <= reference - 1e-4 * step * gg or step < 1e-20:
                    break
                step *= 0.5
            s = cand - theta
            g_diff = cand_grad - grad
            theta, loss, grad = cand, cand_loss, cand_grad
            recent = (recent + [loss])[-int(self.params["memory"]):]
            sy = float(s @ g_diff)
            step = float(s @ s) / sy if sy > 0 else step * 2.0
        self.intercept_ = float(theta[0])
        self.coef_ = theta[1:].copy()
        self.n_iter_ = n_iter
        self.loss_ = loss
        self.grad_max_ = float(np.max(np.abs(grad)))
        self.converged_ = self.grad_max_ < tol
        self.fitted = True
        return self

    def decision_function(self, x):
        self._require_fitted()
        return self.intercept_ + np.asarray(x, dtype=float) @ self.coef_

    def score(self, x):
        return _sigmoid(self.decision_function(x))


@dataclass
class _Node:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None


def _best_split(x, y, w, features, min_leaf):
    """Best weighted-Gini split over ``features``; returns (gain, feature, threshold) or None."""
    total = w.sum()
    pos = w @ y
    parent = 2.0 * pos * (total - pos) / total
    best = None
    for j in features:
        order = np.argsort(x[:, j], kind="mergesort")
        xs = x[order, j]
        cw = np.cumsum(w[order])[:-1]
        cp = np.cumsum(w[order] * y[order])[:-1]
        valid = (xs[1:] > xs[:-1]) & (cw >= min_leaf) & (total - cw >= min_leaf)
        if not valid.any():
            continue
        rw = total - cw
        rp = pos - cp
        with np.errstate(divide="ignore", invalid="ignore"):
            impurity = 2.0 * cp * (cw - cp) / cw + 2.0 * rp * (rw - rp) / rw
        impurity = np.where(valid, impurity, np.inf)
        k = int(np.argmin(impurity))
        gain = parent - impurity[k]
        if gain > 1e-12 * total and (best is None or gain > best[0]):
            best = (gain, j, 0.5 * (xs[k] + xs[k + 1]))
    return best


@dataclass(frozen=True)
class _FlatTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    depth: int


def _descend(x, f, node, rows):
    """Walk every (row, start node) pair down to its leaf, one level per pass."""
    flat_x = np.ascontiguousarray(x).ravel()
    base = rows * x.shape[1]
    # leaves point at themselves, so extra passes are harmless
    feature = np.maximum(f.feature, 0)
    children = np.stack([f.right, f.left], axis=1).ravel()
    for _ in range(f.depth):
        go_left = flat_x[base + feature[node]] <= f.threshold[node]
        node = children[2 * node + go_left]  # go_left selects the second slot
    return node


class DecisionTree(ScoredClassifier):
    """CART tree on weighted Gini impurity; leaves score the weighted positive fraction."""

    kind = "tree"
    defaults = {"max_depth": 5, "min_leaf_fraction": 0.01, "max_features": "all", "seed": 0}

    def _n_features(self, d):
        mf = self.params["max_features"]
        if mf in (None, "all"):
            return d
        if mf == "sqrt":
            return max(1, int(math.isqrt(d)))
        if isinstance(mf, (int, float)) and 0 < mf <= d:
            return int(mf)
        raise ConfigError(f"invalid max_features {mf!r}")

    def fit(self, x, y, w=None, rng=None):
        x, y, w = _check_fit_inputs(x, y, w)
        self._k = self._n_features(x.shape[1])
        self._rng = rng if rng is not None else np.random.default_rng(self.params["seed"])
        min_leaf = float(self.params["min_leaf_fraction"]) * w.sum()
        self.root_ = self._grow(x, y, w, 0, min_leaf)
        self._flatten()
        self.fitted = True
        return self

    def _grow(self, x, y, w, depth, min_leaf):
        total = w.sum()
        node = _Node(value=float(w @ y / total) if total > 0 else 0.5)
        if depth >= int(self.params["max_depth"]) or node.value in (0.0, 1.0):
            return node
        d = x.shape[1]
        features = range(d) if self._k >= d else np.sort(self._rng.choice(d, self._k, replace=False))
        best = _best_split(x, y, w, features, min_leaf)
        if best is None:
            return node
        _, j, t = best
        go_left = x[:, j] <= t
        node.feature, node.threshold = int(j), float(t)
        node.left = self._grow(x[go_left], y[go_left], w[go_left], depth + 1, min_leaf)
        node.right = self._grow(x[~go_left], y[~go_left], w[~go_left], depth + 1, min_leaf)
        return node

    def _flatten(self):
        """Array form of the tree: feature (-1 at leaves), threshold, children, value."""
        nodes, order = [self.root_], 0
        while order < len(nodes):
            node = nodes[order]
            if node.left is not None:
                nodes.extend((node.left, node.right))
            order += 1
        pos = {id(node): i for i, node in enumerate(nodes)}
        self.flat_ = _FlatTree(
            feature=np.array([n.feature if n.left is not None else -1 for n in nodes], dtype=np.int64),
            threshold=np.array([n.threshold for n in nodes]),
            left=np.array([pos[id(n.left)] if n.left is not None else i for i, n in enumerate(nodes)], dtype=np.int64),
            right=np.array([pos[id(n.right)] if n.right is not None else i for i, n in enumerate(nodes)], dtype=np.int64),
            value=np.array([n.value for n in nodes]),
            depth=int(self.params["max_depth"]),
        )

    def score(self, x):
        self._require_fitted()
        x = np.asarray(x, dtype=float)
        f = self.flat_
        return f.value[_descend(x, f, np.zeros(len(x), dtype=np.int64), np.arange(len(x)))]

    def used_features(self) -> set[int]:
        self._require_fitted()
        found, stack = set(), [self.root_]
        while stack:
            node = stack.pop()
            if node.left is not None:
                found.add(node.feature)
                stack.extend((node.left, node.right))
        return found


class GaussianNB(ScoredClassifier):
    kind = "gnb"
    defaults = {"var_floor": 1e-9, "seed": 0}

    def fit(self, x, y, w=None):
        x, y, w = _check_fit_inputs(x, y, w)
        floor = float(self.params["var_floor"])
        self.log_prior_ = np.empty(2)
        self.mean_ = np.empty((2, x.shape[1]))
        self.var_ = np.empty((2, x.shape[1]))
        for c in (0, 1):
            wc = w * (y == c)
            total = wc.sum()
            self.log_prior_[c] = math.log(total / w.sum())
            mean = wc @ x / total
            self.mean_[c] = mean
            self.var_[c] = np.maximum(wc @ (x - mean) ** 2 / total, floor)
        self.fitted = True
        return self

    def _joint_log_likelihood(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty((len(x), 2))
        for c in (0, 1):
            ll = -0.5 * np.sum(np.log(2.0 * np.pi * self.var_[c]) + (x - self.mean_[c]) ** 2 / self.var_[c], axis=1)
            out[:, c] = self.log_prior_[c] + ll
        return out

    def score(self, x):
        self._require_fitted()
        jll = self._joint_log_likelihood(x)
        return _sigmoid(jll[:, 1] - jll[:, 0])


class RandomForest(ScoredClassifier):
    """Bagged CART trees; bootstrap rows are drawn with probability proportional to weight."""

    kind = "forest"
    defaults = {
        "tree_count": 50,
        "max_depth": 8,
        "min_leaf_fraction": 0.01,
        "max_features": "sqrt",
        "bootstrap": True,
        "seed": 0,
    }

    def fit(self, x, y, w=None):
        x, y, w = _check_fit_inputs(x, y, w)
        rng = np.random.default_rng(self.params["seed"])
        tree_params = {k: self.params[k] for k in ("max_depth", "min_leaf_fraction", "max_features")}
        self.trees_ = []
        n = len(y)
        for _ in range(int(self.params["tree_count"])):
            tree = DecisionTree(**tree_params)
            if self.params["bootstrap"]:
                idx = rng.choice(n, size=n, replace=True, p=w / w.sum())
                bx, by, bw = x[idx], y[idx], np.ones(n)
                if by.min() == by.max():
                    # one-class resample: keep the full weighted data instead
                    bx, by, bw = x, y, w
            else:
                bx, by, bw = x, y, w
            self.trees_.append(tree.fit(bx, by, bw, rng=rng))
        self._stack()
        self.fitted = True
        return self

    def score(self, x):
        self._require_fitted()
        x = np.asarray(x, dtype=float)
        f = self.flat_
        n = len(x)
        # all trees at once: one (tree, row) walk over the stacked node arrays
        start = np.repeat(self.offsets_, n)
        rows = np.tile(np.arange(n), len(self.trees_))
        leaves = f.value[_descend(x, f, start, rows)]
        return leaves.reshape(len(self.trees_), n).mean(axis=0)

    def _stack(self):
        flats = [t.flat_ for t in self.trees_]
        sizes = [len(fl.value) for fl in flats]
        offsets = np.concatenate(([0], np.cumsum(sizes)[:-1])).astype(np.int64)
        self.offsets_ = offsets
        self.flat_ = _FlatTree(
            feature=np.concatenate([fl.feature for fl in flats]),
            threshold=np.concatenate([fl.threshold for fl in flats]),
            left=np.concatenate([fl.left + o for fl, o in zip(flats, offsets)]),
            right=np.concatenate([fl.right + o for fl, o in zip(flats, offsets)]),
            value=np.concatenate([fl.value for fl in flats]),
            depth=max(fl.depth for fl in flats),
        )


MODEL_KINDS = {
    "logistic": LogisticRegression,
    "tree": DecisionTree,
    "gnb": GaussianNB,
    "forest": RandomForest,
}
ALIASES = {
    "lr": "logistic",
    "logisticregression": "logistic",
    "logistic_regression": "logistic",
    "dt": "tree",
    "decisiontree": "tree",
    "decision_tree": "tree",
    "nb": "gnb",
    "naivebayes": "gnb",
    "naive_bayes": "gnb",
    "rf": "forest",
    "randomforest": "forest",
    "random_forest": "forest",
}


def canonical_kind(kind: str) -> str:
    key = str(kind).lower()
    key = ALIASES.get(key, key)
    if key not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}")
    return key


def make_model(kind: str, params: dict | None = None) -> ScoredClassifier:
    return MODEL_KINDS[canonical_kind(kind)](**(params or {}))


@dataclass(frozen=True)
class ModelFactory:
    """Model kind plus hyperparameters; reductions call it once per subproblem."""

    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self) -> ScoredClassifier:
        return make_model(self.kind, self.params)


def fit_logistic(ds, hp=None):
    return LogisticRegression(**(hp or {})).fit(ds.features, ds.labels, ds.weights)


def fit_tree(ds, hp=None):
    return DecisionTree(**(hp or {})).fit(ds.features, ds.labels, ds.weights)


def fit_gnb(ds, hp=None):
    return GaussianNB(**(hp or {})).fit(ds.features, ds.labels, ds.weights)


def fit_forest(ds, hp=None):
    return RandomForest(**(hp or {})).fit(ds.features, ds.labels, ds.weights)
