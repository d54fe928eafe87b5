"""Pre-processing: reweighing and learned fair representations (LFR)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..data import TabularDataset
from ..errors import MitigationError, ParameterError


@dataclass(frozen=True)
class ReweighResult:
    cell_weights: dict  # (protected, label) -> weight
    dataset: TabularDataset


def reweigh(ds: TabularDataset) -> ReweighResult:
    """Weight each (group, label) cell by ``n_group * n_label / (n * n_cell)``.

    Counts are unweighted, so incoming instance weights are replaced.
    """
    n = len(ds)
    cells = ds.cell_counts()
    empty = [cell for cell, count in cells.items() if count == 0]
    if empty:
        raise MitigationError(f"reweighing needs all four (group, label) cells; empty: {empty}")
    n_group = {g: int(np.sum(ds.protected == g)) for g in (0, 1)}
    n_label = {y: int(np.sum(ds.labels == y)) for y in (0, 1)}
    weights = {
        (g, y): n_group[g] * n_label[y] / (n * cells[(g, y)]) for g in (0, 1) for y in (0, 1)
    }
    table = np.array([[weights[(0, 0)], weights[(0, 1)]], [weights[(1, 0)], weights[(1, 1)]]])
    return ReweighResult(cell_weights=weights, dataset=ds.replace(weights=table[ds.protected, ds.labels]))


def _softmax_rows(a):
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=1, keepdims=True)


def _sigmoid(u):
    return 0.5 * (1.0 + np.tanh(0.5 * u))


_EPS = 1e-12


@dataclass
class LFRModel:
    prototypes: np.ndarray
    label_logits: np.ndarray
    a_x: float
    a_y: float
    a_z: float
    temperature: float = 1.0
    relabel: bool = False
    iterations: int = 0
    loss_terms: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    @property
    def label_weights(self) -> np.ndarray:
        return _sigmoid(self.label_logits)

    def memberships(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[1] != self.prototypes.shape[1]:
            raise MitigationError(
                f"LFR fitted on {self.prototypes.shape[1]} features, got {x.shape[1]}"
            )
        d2 = (
            np.sum(x * x, axis=1)[:, None]
            - 2.0 * x @ self.prototypes.T
            + np.sum(self.prototypes ** 2, axis=1)[None, :]
        )
        return _softmax_rows(-np.maximum(d2, 0.0) / self.temperature)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(x) == 0:
            return x.reshape(0, self.prototypes.shape[1])
        return self.memberships(x) @ self.prototypes

    def label_scores(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(x) == 0:
            return np.zeros(0)
        return self.memberships(x) @ self.label_weights


def lfr_objective(prototypes, label_logits, x, y, unpriv, a_x, a_y, a_z, temperature, with_grad=True):
    """LFR loss ``a_x*L_x + a_y*L_y + a_z*L_z`` and its gradient.

    L_x: mean squared reconstruction error (summed over features).
    L_y: mean cross-entropy of membership-weighted prototype label scores.
    L_z: mean over prototypes of |mean membership(unpriv) - mean membership(priv)|.
    """
    n, _ = x.shape
    k = prototypes.shape[0]
    diff = x[:, None, :] - prototypes[None, :, :]
    d2 = np.sum(diff ** 2, axis=2)
    m = _softmax_rows(-d2 / temperature)
    w = _sigmoid(label_logits)

    recon = m @ prototypes
    resid = recon - x
    l_x = float(np.sum(resid ** 2) / n)

    y_hat = np.clip(m @ w, _EPS, 1.0 - _EPS)
    l_y = float(-np.mean(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat)))

    n_u = unpriv.sum()
    n_p = n - n_u
    gap = m[unpriv].sum(axis=0) / n_u - m[~unpriv].sum(axis=0) / n_p
    l_z = float(np.mean(np.abs(gap)))

    loss = a_x * l_x + a_y * l_y + a_z * l_z
    terms = {"L_x": l_x, "L_y": l_y, "L_z": l_z, "total": loss}
    if not with_grad:
        return loss, terms, None, None

    # gradient with respect to memberships
    g_m = a_x * (2.0 / n) * resid @ prototypes.T
    dl_dyhat = -(y / y_hat - (1.0 - y) / (1.0 - y_hat)) / n
    g_m += a_y * dl_dyhat[:, None] * w[None, :]
    group_term = np.where(unpriv, 1.0 / n_u, -1.0 / n_p)
    g_m += a_z / k * group_term[:, None] * np.sign(gap)[None, :]

    g_v = a_x * (2.0 / n) * m.T @ resid
    g_u = a_y * (m.T @ dl_dyhat) * w * (1.0 - w)

    # softmax backprop, logits a_ik = -d2_ik / T
    g_a = m * (g_m - np.sum(m * g_m, axis=1, keepdims=True))
    # d a_ik / d v_k = (2 / T) (x_i - v_k)
    g_v += (2.0 / temperature) * (g_a.T @ x - g_a.sum(axis=0)[:, None] * prototypes)
    return loss, terms, g_v, g_u


def lfr_fit(
    ds: TabularDataset,
    k: int = 10,
    a_x: float = 0.01,
    a_y: float = 1.0,
    a_z: float = 50.0,
    max_iters: int = 500,
    seed: int = 0,
    temperature: float = 1.0,
    relabel: bool = False,
    step_size: float = 1.0,
) -> LFRModel:
    """Fit LFR prototypes by backtracking gradient descent.

    Prototypes start at randomly chosen training rows. A step is accepted
    only when it lowers the objective; the run stops early once no step size
    down to ``1e-12`` makes progress.
    """
    if k < 1:
        raise ParameterError(f"LFR needs at least one prototype, got k={k}")
    if min(a_x, a_y, a_z) < 0:
        raise ParameterError("LFR trade-off coefficients must be nonnegative")
    x = np.asarray(ds.features, dtype=float)
    y = ds.labels.astype(float)
    unpriv = ds.protected == 0
    if unpriv.all() or not unpriv.any():
        raise MitigationError("LFR needs both protected groups in the training data")

    rng = np.random.default_rng(seed)
    n = len(x)
    if k <= n:
        v = x[rng.choice(n, size=k, replace=False)].copy()
    else:
        v = x[rng.choice(n, size=k, replace=True)] + 0.01 * rng.standard_normal((k, x.shape[1]))
    u = np.zeros(k)

    loss, terms, g_v, g_u = lfr_objective(v, u, x, y, unpriv, a_x, a_y, a_z, temperature)
    history = [loss]
    step = float(step_size)
    it = 0
    for it in range(1, int(max_iters) + 1):
        sq = float(np.sum(g_v ** 2) + np.sum(g_u ** 2))
        if sq == 0.0:
            break
        accepted = False
        while step >= 1e-12:
            v_new = v - step * g_v
            u_new = u - step * g_u
            new_loss, new_terms, _, _ = lfr_objective(
                v_new, u_new, x, y, unpriv, a_x, a_y, a_z, temperature, with_grad=False
            )
            if not np.isfinite(new_loss):
                raise MitigationError("LFR objective became non-finite; try a smaller step_size")
            if new_loss < loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        v, u = v_new, u_new
        loss, terms, g_v, g_u = lfr_objective(v, u, x, y, unpriv, a_x, a_y, a_z, temperature)
        history.append(loss)
        step *= 2.0

    return LFRModel(
        prototypes=v,
        label_logits=u,
        a_x=a_x,
        a_y=a_y,
        a_z=a_z,
        temperature=temperature,
        relabel=relabel,
        iterations=it,
        loss_terms=terms,
        history=history,
    )


def lfr_apply(model: LFRModel, ds: TabularDataset, relabel: bool | None = None) -> TabularDataset:
    """Replace features by their prototype reconstructions (and optionally relabel)."""
    relabel = model.relabel if relabel is None else relabel
    features = model.transform(ds.features)
    labels = ds.labels
    if relabel and len(ds):
        labels = (model.label_scores(ds.features) >= 0.5).astype(np.int64)
    return ds.replace(features=features, labels=labels)
