"""Tabular datasets: CSV ingestion, splitting, standardization and synthetic data."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError, ParameterError, SchemaError, SplitError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
PROTECTED = "protected"


@dataclass(frozen=True)
class Schema:
    """Column roles for :func:`load_csv`.

    ``favorable`` and ``privileged`` are raw cell values; they are compared as
    strings so ``0`` in a config matches ``0`` in the file.
    """

    label: str
    favorable: object
    protected: str
    privileged: object
    categorical: tuple[str, ...] = ()
    drop: tuple[str, ...] = ()
    include_protected: bool = True


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularDataset:
    features: np.ndarray
    feature_names: tuple[str, ...]
    labels: np.ndarray
    protected: np.ndarray
    weights: np.ndarray
    feature_kinds: tuple[str, ...]
    # (source column, column indices) for every one-hot expanded column
    onehot_groups: tuple[tuple[str, tuple[int, ...]], ...] = ()
    favorable_raw: object = 1
    privileged_raw: object = 1
    name: str = "dataset"
    split_tag: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "features", _frozen(self.features, float).reshape(-1, len(self.feature_names)))
        object.__setattr__(self, "labels", _frozen(self.labels, np.int64))
        object.__setattr__(self, "protected", _frozen(self.protected, np.int64))
        object.__setattr__(self, "weights", _frozen(self.weights, float))
        n = self.features.shape[0]
        if not (len(self.labels) == len(self.protected) == len(self.weights) == n):
            raise DataError(
                f"length mismatch: features {n}, labels {len(self.labels)}, "
                f"protected {len(self.protected)}, weights {len(self.weights)}"
            )
        if len(self.feature_kinds) != len(self.feature_names):
            raise DataError("feature_kinds must match feature_names")
        if n and not np.isin(self.labels, (0, 1)).all():
            raise DataError("labels must be 0/1")
        if n and not np.isin(self.protected, (0, 1)).all():
            raise DataError("protected attribute must be 0/1")
        if n and not (self.weights > 0).all():
            raise DataError("instance weights must be positive")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def replace(self, **changes) -> "TabularDataset":
        return dataclasses.replace(self, **changes)

    def subset(self, index, split_tag: str | None = None) -> "TabularDataset":
        index = np.asarray(index, dtype=np.int64)
        return self.replace(
            features=self.features[index],
            labels=self.labels[index],
            protected=self.protected[index],
            weights=self.weights[index],
            split_tag=self.split_tag if split_tag is None else split_tag,
        )

    def cell_counts(self) -> dict[tuple[int, int], int]:
        """Unweighted counts keyed by (protected, label)."""
        return {
            (g, y): int(np.sum((self.protected == g) & (self.labels == y)))
            for g in (0, 1)
            for y in (0, 1)
        }

    def continuous_mask(self) -> np.ndarray:
        return np.array([k == CONTINUOUS for k in self.feature_kinds], dtype=bool)


def _as_key(value) -> str:
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    return str(value).strip()


def _binarize(column: pd.Series, positive, role: str) -> np.ndarray:
    values = column.astype(str).str.strip()
    key = _as_key(positive)
    if key not in set(values):
        raise SchemaError(f"{role} value {positive!r} does not occur in column {column.name!r}")
    distinct = sorted(set(values))
    if len(distinct) > 2:
        raise DataError(
            f"column {column.name!r} ({role}) is not binary: {len(distinct)} distinct values {distinct[:6]}"
        )
    return (values == key).to_numpy().astype(np.int64)


def load_csv(path, schema: Schema, name: str | None = None) -> TabularDataset:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"dataset file not found: {path}")
    header = pd.read_csv(path, nrows=0, encoding="utf-8").columns.tolist()
    for role, col in (("label", schema.label), ("protected", schema.protected)):
        if col not in header:
            raise SchemaError(f"{role} column {col!r} missing from {path.name}; header has {header}")
    for col in (*schema.categorical, *schema.drop):
        if col not in header:
            raise SchemaError(f"column {col!r} declared in schema but missing from {path.name}")

    df = pd.read_csv(
        path, encoding="utf-8", dtype={schema.label: str, schema.protected: str}, float_precision="round_trip"
    )
    if df.isna().any().any():
        bad = df.columns[df.isna().any()].tolist()
        raise DataError(f"missing values in columns {bad}; imputation is not supported")

    labels = _binarize(df[schema.label], schema.favorable, "favorable")
    protected = _binarize(df[schema.protected], schema.privileged, "privileged")
    if protected.sum() == 0 or protected.sum() == len(protected):
        raise DataError(f"protected column {schema.protected!r} has an empty group")

    columns, names, kinds, groups = [], [], [], []
    for col in header:
        if col in (schema.label, *schema.drop):
            continue
        if col == schema.protected:
            if schema.include_protected:
                columns.append(protected.astype(float))
                names.append(col)
                kinds.append(PROTECTED)
            continue
        if col in schema.categorical:
            cats = sorted(df[col].astype(str).unique())
            idx = []
            for cat in cats:
                idx.append(len(names))
                columns.append((df[col].astype(str) == cat).to_numpy(dtype=float))
                names.append(f"{col}={cat}")
                kinds.append(CATEGORICAL)
            groups.append((col, tuple(idx)))
            continue
        try:
            columns.append(pd.to_numeric(df[col]).to_numpy(dtype=float))
        except (ValueError, TypeError) as exc:
            raise SchemaError(f"column {col!r} is not numeric; declare it categorical") from exc
        names.append(col)
        kinds.append(CONTINUOUS)

    features = np.column_stack(columns) if columns else np.zeros((len(df), 0))
    return TabularDataset(
        features=features,
        feature_names=tuple(names),
        labels=labels,
        protected=protected,
        weights=np.ones(len(df)),
        feature_kinds=tuple(kinds),
        onehot_groups=tuple(groups),
        favorable_raw=schema.favorable,
        privileged_raw=schema.privileged,
        name=name or path.stem,
    )


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    valid: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        for label, frac in (("train", self.train), ("valid", self.valid), ("test", self.test)):
            if not 0.0 < frac < 1.0:
                raise ParameterError(f"{label} fraction must lie in (0, 1), got {frac}")
        if abs(self.train + self.valid + self.test - 1.0) > 1e-9:
            raise ParameterError(
                f"split fractions must sum to 1, got {self.train + self.valid + self.test}"
            )

    def sizes(self, n: int) -> tuple[int, int, int]:
        n_valid = math.floor(n * self.valid + 1e-9)
        n_test = math.floor(n * self.test + 1e-9)
        return n - n_valid - n_test, n_valid, n_test


MIN_CELL = 2


def split(ds: TabularDataset, spec: SplitSpec):
    """Stratified train/valid/test split; returns ``(train, valid, test)``.

    Rows of each (group, label) cell are shuffled and spread evenly over a
    global ordering, which is then cut at the floor allocation sizes. This
    keeps cell proportions close to the source in every split.
    """
    n = len(ds)
    n_train, n_valid, n_test = spec.sizes(n)
    counts = ds.cell_counts()
    for cell, count in counts.items():
        # each of the three splits needs MIN_CELL rows from this cell
        if count < 3 * MIN_CELL:
            raise SplitError(f"cell (protected={cell[0]}, label={cell[1]}) has only {count} rows")

    rng = np.random.default_rng(spec.seed)
    position = np.empty(n)
    cell_id = ds.protected * 2 + ds.labels
    for c in range(4):
        members = np.flatnonzero(cell_id == c)
        order = rng.permutation(len(members))
        position[members[order]] = (np.arange(len(members)) + 0.5) / len(members)
    tiebreak = rng.random(n)
    ordering = np.lexsort((tiebreak, position))

    valid_idx = np.sort(ordering[:n_valid])
    test_idx = np.sort(ordering[n_valid:n_valid + n_test])
    train_idx = np.sort(ordering[n_valid + n_test:])
    parts = []
    for tag, idx in (("train", train_idx), ("valid", valid_idx), ("test", test_idx)):
        part = ds.subset(idx, split_tag=tag)
        for cell, count in part.cell_counts().items():
            if count < MIN_CELL:
                raise SplitError(
                    f"{tag} split has {count} rows in cell (protected={cell[0]}, label={cell[1]})"
                )
        parts.append(part)
    assert len(parts[0]) == n_train
    return tuple(parts)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    scale: np.ndarray

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) / self.scale


def standardize(train: TabularDataset, others: Sequence[TabularDataset] = ()):
    """Z-score continuous columns using train statistics.

    Returns ``([train, *others], scaler)``. Zero-variance columns are only
    centered; one-hot and protected columns pass through unchanged.
    """
    if len(train) == 0:
        raise DataError("cannot standardize an empty training set")
    cont = train.continuous_mask()
    mean = np.zeros(train.n_features)
    scale = np.ones(train.n_features)
    mean[cont] = train.features[:, cont].mean(axis=0)
    std = train.features[:, cont].std(axis=0)
    scale[cont] = np.where(std > 0, std, 1.0)
    scaler = Scaler(mean=mean, scale=scale)
    out = [ds.replace(features=scaler.transform(ds.features)) for ds in (train, *others)]
    return out, scaler


def synth_biased(n: int, d: int, label_gap: float, score_noise: float = 0.5, seed: int = 0) -> TabularDataset:
    """Synthetic data whose favorable-label rate differs by ``label_gap`` between groups.

    Group rates are ``0.5 + label_gap / 2`` (unprivileged) and
    ``0.5 - label_gap / 2`` (privileged). Inside each group the rows with the
    highest latent score ``x @ coef + noise`` get the favorable label, so the
    features stay predictive.
    """
    if n < 100 or d < 2:
        raise ParameterError(f"synth_biased needs n >= 100 and d >= 2, got n={n}, d={d}")
    rate_unpriv = 0.5 + label_gap / 2.0
    rate_priv = 0.5 - label_gap / 2.0
    if not (0.0 <= rate_unpriv <= 1.0 and 0.0 <= rate_priv <= 1.0) or not math.isfinite(label_gap):
        raise ParameterError(f"label_gap {label_gap} pushes a group rate outside [0, 1]")

    rng = np.random.default_rng(seed)
    protected = np.zeros(n, dtype=np.int64)
    protected[rng.permutation(n)[: n // 2]] = 1
    x = rng.standard_normal((n, d))
    coef = 1.0 / np.sqrt(np.arange(1, d + 1))
    latent = x @ coef + score_noise * rng.standard_normal(n)

    labels = np.zeros(n, dtype=np.int64)
    for group, rate in ((0, rate_unpriv), (1, rate_priv)):
        members = np.flatnonzero(protected == group)
        k = int(round(rate * len(members)))
        top = members[np.argsort(-latent[members], kind="stable")[:k]]
        labels[top] = 1

    features = np.column_stack([x, protected.astype(float)])
    return TabularDataset(
        features=features,
        feature_names=tuple(f"x{j}" for j in range(d)) + ("group",),
        labels=labels,
        protected=protected,
        weights=np.ones(n),
        feature_kinds=(CONTINUOUS,) * d + (PROTECTED,),
        name=f"synth(n={n},d={d},gap={label_gap},seed={seed})",
    )


def synth_to_frame(ds: TabularDataset) -> pd.DataFrame:
    """CSV-ready frame for a :func:`synth_biased` dataset (label and group columns)."""
    cont = [i for i, k in enumerate(ds.feature_kinds) if k == CONTINUOUS]
    frame = pd.DataFrame(ds.features[:, cont], columns=[ds.feature_names[i] for i in cont])
    frame["group"] = ds.protected
    frame["label"] = ds.labels
    return frame


def label_spd(ds: TabularDataset, weighted: bool = False) -> float:
    """Favorable-label rate difference (unprivileged minus privileged) of the data itself."""
    w = ds.weights if weighted else np.ones(len(ds))
    rates = []
    for g in (0, 1):
        m = ds.protected == g
        rates.append(np.sum(w[m] * ds.labels[m]) / np.sum(w[m]))
    return float(rates[0] - rates[1])
