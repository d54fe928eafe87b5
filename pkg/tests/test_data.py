import numpy as np
import pandas as pd
import pytest

from faircompose.data import (
    CATEGORICAL,
    CONTINUOUS,
    PROTECTED,
    Schema,
    SplitSpec,
    label_spd,
    load_csv,
    split,
    standardize,
    synth_biased,
    synth_to_frame,
)
from faircompose.errors import DataError, ParameterError, SchemaError, SplitError


@pytest.fixture
def csv_path(tmp_path):
    df = pd.DataFrame({
        "age": [20, 30, 40, 50, 60, 25, 35, 45],
        "color": ["red", "blue", "red", "green", "blue", "red", "green", "blue"],
        "sex": ["m", "f", "m", "f", "m", "f", "m", "f"],
        "outcome": ["yes", "no", "yes", "no", "yes", "yes", "no", "no"],
    })
    path = tmp_path / "toy.csv"
    df.to_csv(path, index=False)
    return path


def schema(**kw):
    base = dict(label="outcome", favorable="yes", protected="sex", privileged="m", categorical=("color",))
    base.update(kw)
    return Schema(**base)


def test_load_csv_encodes_roles(csv_path):
    ds = load_csv(csv_path, schema())
    assert ds.feature_names == ("age", "color=blue", "color=green", "color=red", "sex")
    assert ds.feature_kinds == (CONTINUOUS, CATEGORICAL, CATEGORICAL, CATEGORICAL, PROTECTED)
    np.testing.assert_array_equal(ds.labels, [1, 0, 1, 0, 1, 1, 0, 0])
    np.testing.assert_array_equal(ds.protected, [1, 0, 1, 0, 1, 0, 1, 0])
    assert ds.onehot_groups == (("color", (1, 2, 3)),)
    assert (ds.features[:, 1:4].sum(axis=1) == 1).all()


def test_load_csv_without_protected_feature(csv_path):
    ds = load_csv(csv_path, schema(include_protected=False))
    assert "sex" not in ds.feature_names
    assert len(ds.protected) == 8


def test_load_csv_errors(csv_path, tmp_path):
    with pytest.raises(SchemaError):
        load_csv(csv_path, schema(label="missing"))
    with pytest.raises(SchemaError):
        load_csv(csv_path, schema(categorical=()))  # color is text
    with pytest.raises(SchemaError):
        load_csv(csv_path, schema(favorable="maybe"))
    with pytest.raises(SchemaError):
        load_csv(tmp_path / "nope.csv", schema())
    bad = tmp_path / "gap.csv"
    pd.read_csv(csv_path).assign(age=[1, None, 3, 4, 5, 6, 7, 8]).to_csv(bad, index=False)
    with pytest.raises(DataError):
        load_csv(bad, schema())


def test_dataset_is_immutable(csv_path):
    ds = load_csv(csv_path, schema())
    with pytest.raises(ValueError):
        ds.features[0, 0] = 99.0


def test_split_sizes_and_strata(synth_small):
    train, valid, test = split(synth_small, SplitSpec(seed=3))
    assert (len(train), len(valid), len(test)) == (360, 120, 120)
    whole = synth_small.cell_counts()
    for part in (train, valid, test):
        for cell, count in part.cell_counts().items():
            assert abs(count / len(part) - whole[cell] / len(synth_small)) < 0.02
    rows = np.concatenate([p.features for p in (train, valid, test)])
    assert len(np.unique(rows, axis=0)) == len(synth_small)


def test_split_deterministic(synth_small):
    a = split(synth_small, SplitSpec(seed=1))
    b = split(synth_small, SplitSpec(seed=1))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.features, y.features)


def test_split_spec_validation():
    with pytest.raises(ParameterError):
        SplitSpec(train=0.5, valid=0.2, test=0.2)
    with pytest.raises(ParameterError):
        SplitSpec(train=1.0, valid=0.0, test=0.0)


def test_split_rejects_tiny_cells(dataset_factory):
    y = np.array([1] * 40 + [0] * 3)
    g = np.array([0, 1] * 20 + [1, 1, 1])
    ds = dataset_factory(np.arange(43.0), y, g)
    with pytest.raises(SplitError):
        split(ds, SplitSpec())


def test_standardize_uses_train_statistics(synth_small):
    train, valid, test = split(synth_small, SplitSpec())
    (tr, va, te), scaler = standardize(train, [valid, test])
    cont = tr.continuous_mask()
    np.testing.assert_allclose(tr.features[:, cont].mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(tr.features[:, cont].std(axis=0), 1.0, atol=1e-12)
    np.testing.assert_array_equal(tr.features[:, ~cont], train.features[:, ~cont])
    np.testing.assert_allclose(va.features, scaler.transform(valid.features))


def test_synth_biased_gap():
    ds = synth_biased(2000, 4, -0.3, seed=0)
    assert label_spd(ds) == pytest.approx(-0.3, abs=1e-3)
    assert int(ds.protected.sum()) == 1000
    with pytest.raises(ParameterError):
        synth_biased(1000, 4, -1.5)
    with pytest.raises(ParameterError):
        synth_biased(50, 4, 0.0)


def test_synth_frame_round_trip(tmp_path):
    ds = synth_biased(300, 2, 0.1, seed=2)
    path = tmp_path / "s.csv"
    synth_to_frame(ds).to_csv(path, index=False, float_format="%.17g")
    back = load_csv(path, Schema(label="label", favorable=1, protected="group", privileged=1))
    np.testing.assert_array_equal(back.features, ds.features)
    np.testing.assert_array_equal(back.labels, ds.labels)
