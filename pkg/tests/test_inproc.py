import numpy as np
import pytest

from faircompose.data import synth_biased
from faircompose.errors import ConfigError, ParameterError
from faircompose.metrics import spd
from faircompose.mitigation.inproc import (
    DEFAULT_GRID,
    DEFAULT_GRID_EO,
    ConstraintKind,
    FairnessConstraint,
    constraint_violation,
    default_grid,
    expgrad_fit,
    gridsearch_fit,
    select_candidate,
)
from faircompose.mitigation.pre import reweigh
from faircompose.models import ModelFactory


@pytest.fixture(scope="module")
def biased():
    return synth_biased(1200, 3, -0.3, seed=11)


def test_constraint_parsing():
    assert ConstraintKind.parse("equalized_odds") is ConstraintKind.EQUALIZED_ODDS
    with pytest.raises(ConfigError):
        ConstraintKind.parse("parity")
    with pytest.raises(ParameterError):
        FairnessConstraint("DemographicParity", eps=-1)


def test_violation_definitions():
    preds = np.array([1, 0, 1, 1, 1, 0, 0, 0])
    labels = np.array([1, 0, 1, 0, 1, 0, 1, 0])
    groups = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    assert constraint_violation(preds, labels, groups, "DemographicParity") == pytest.approx(abs(spd(preds, groups)))
    # tpr gap 1 - .5, fpr gap .5 - 0
    assert constraint_violation(preds, labels, groups, "EqualizedOdds") == pytest.approx(0.5)


def test_grids():
    assert len(DEFAULT_GRID) == 41 and len(DEFAULT_GRID_EO) == 21
    assert DEFAULT_GRID[20] == 0.0 and DEFAULT_GRID[0] == -2.0
    assert list(DEFAULT_GRID) == sorted(DEFAULT_GRID)
    assert default_grid("EqualizedOdds") is DEFAULT_GRID_EO


def test_expgrad_single_round_is_unconstrained_fit(biased):
    factory = ModelFactory("logistic", {})
    for ds in (biased, reweigh(biased).dataset):
        red = expgrad_fit(factory, ds, max_rounds=1)
        base = factory().fit(ds.features, ds.labels, ds.weights)
        np.testing.assert_array_equal(red.score(ds.features), base.score(ds.features))


def test_gridsearch_lambda_zero_is_unconstrained_fit(biased):
    factory = ModelFactory("logistic", {})
    red = gridsearch_fit(factory, biased, grid=[0.0])
    base = factory().fit(biased.features, biased.labels, biased.weights)
    np.testing.assert_array_equal(red.score(biased.features), base.score(biased.features))


def test_gridsearch_selection_is_brute_force_best(biased):
    for constraint in (FairnessConstraint("DemographicParity", 0.02), FairnessConstraint("EqualizedOdds", 0.05)):
        grid = None if constraint.kind is ConstraintKind.DEMOGRAPHIC_PARITY else [-0.5, -0.1, 0.0, 0.1, 0.5]
        red = gridsearch_fit(ModelFactory("gnb", {}), biased, constraint, grid=grid)
        table = red.candidates
        chosen = int(np.argmax(red.weights))
        feasible = [i for i, r in enumerate(table) if r["violation"] <= constraint.eps]
        if feasible:
            assert table[chosen]["error"] == min(table[i]["error"] for i in feasible)
            assert red.flags == []
        else:
            assert table[chosen]["violation"] == min(r["violation"] for r in table)
            assert red.flags == ["gridsearch_infeasible_fallback"]
        assert red.deterministic


def test_select_candidate_fallback():
    table = [{"error": 0.1, "violation": 0.3}, {"error": 0.2, "violation": 0.2}]
    assert select_candidate(table, 0.05) == (1, ["gridsearch_infeasible_fallback"])
    assert select_candidate(table, 0.25) == (1, [])
    assert select_candidate(table, 0.5) == (0, [])


def test_reductions_improve_parity(biased):
    factory = ModelFactory("logistic", {})
    base = factory().fit(biased.features, biased.labels)
    base_gap = constraint_violation(base.score(biased.features) >= 0.5, biased.labels, biased.protected, "DemographicParity")
    for red in (expgrad_fit(factory, biased, max_rounds=30), gridsearch_fit(factory, biased)):
        preds = red.score(biased.features) >= 0.5
        gap = constraint_violation(preds, biased.labels, biased.protected, "DemographicParity")
        assert gap < base_gap / 2


def test_expgrad_log_and_multiplier_bound(biased):
    red = expgrad_fit(ModelFactory("gnb", {}), biased, max_rounds=8, bound=10.0)
    assert [e["round"] for e in red.log] == list(range(1, 9))
    for entry in red.log:
        assert 0.0 <= sum(entry["multipliers"]) <= 10.0
    assert red.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ParameterError):
        expgrad_fit(ModelFactory("gnb", {}), biased, max_rounds=0)
