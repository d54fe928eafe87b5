import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faircompose import metrics as M
from faircompose.errors import MetricError


def test_spd_di_hand_example():
    preds = np.array([1, 0, 0, 0, 1, 1, 1, 0])
    groups = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    assert M.spd(preds, groups) == pytest.approx(0.25 - 0.75)
    assert M.di(preds, groups) == pytest.approx(1 / 3)


def test_di_zero_over_zero_and_division_by_zero():
    groups = np.array([0, 0, 1, 1])
    assert M.di(np.array([0, 0, 0, 0]), groups) == 1.0
    assert math.isinf(M.di(np.array([1, 0, 0, 0]), groups))


def test_eod_aod_hand_example():
    labels = np.array([1, 1, 0, 0, 1, 1, 0, 0])
    groups = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    preds = np.array([1, 0, 1, 0, 1, 1, 0, 0])
    # unpriv tpr .5 fpr .5, priv tpr 1 fpr 0
    assert M.eod(preds, labels, groups) == pytest.approx(-0.5)
    assert M.aod(preds, labels, groups) == pytest.approx(0.0)


def test_empty_group_raises():
    with pytest.raises(MetricError):
        M.spd(np.array([1, 0]), np.array([1, 1]))
    with pytest.raises(MetricError):
        M.eod(np.array([1, 0]), np.array([0, 0]), np.array([0, 1]))


def test_balanced_accuracy_and_accuracy():
    labels = np.array([1, 1, 1, 0])
    preds = np.array([1, 1, 0, 1])
    assert M.accuracy(preds, labels) == 0.5
    assert M.balanced_accuracy(preds, labels) == pytest.approx((2 / 3 + 0) / 2)


def _auc_pairs(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else (0.5 if p == n else 0.0)
    return total / (len(pos) * len(neg))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 1)), min_size=2, max_size=40))
def test_auc_matches_pair_counting(rows):
    scores = np.array([r[0] for r in rows], dtype=float)
    labels = np.array([r[1] for r in rows])
    if labels.min() == labels.max():
        with pytest.raises(MetricError):
            M.roc_auc(scores, labels)
        return
    assert M.roc_auc(scores, labels) == pytest.approx(_auc_pairs(scores, labels), abs=1e-12)


def test_auc_perfect_and_constant():
    labels = np.array([0, 0, 1, 1])
    assert M.roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 1.0
    assert M.roc_auc(np.full(4, 0.3), labels) == 0.5


def test_average_ranks_ties():
    np.testing.assert_array_equal(M.average_ranks([3, 1, 3, 2]), [3.5, 1, 3.5, 2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_metric_ranges(rows):
    preds = np.array([r[0] for r in rows])
    labels = np.array([r[1] for r in rows])
    groups = np.array([r[2] for r in rows])
    try:
        value = M.spd(preds, groups)
    except MetricError:
        return
    assert -1.0 <= value <= 1.0
    assert M.di(preds, groups) >= 0.0


def test_metric_bundle_fields():
    preds = np.array([1, 0, 1, 1, 0, 0, 1, 0])
    labels = np.array([1, 0, 0, 1, 1, 0, 1, 0])
    groups = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    b = M.metric_bundle(preds, labels, groups)
    assert b.spd == pytest.approx(M.spd(preds, groups))
    assert b.di == pytest.approx(M.di(preds, groups))
    assert b.eod == pytest.approx(M.eod(preds, labels, groups))
    assert b.aod == pytest.approx(M.aod(preds, labels, groups))
    assert set(b.scalars()) == {"accuracy", "balanced_accuracy", "roc_auc", "spd", "di", "eod", "aod"}
    assert b.group_rates["unprivileged"]["selection_rate"] == 0.75


def test_length_mismatch():
    with pytest.raises(MetricError):
        M.accuracy([1, 0], [1])
