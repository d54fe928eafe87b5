import numpy as np
import pytest

from faircompose.errors import ConfigError, FitError
from faircompose.models import (
    DecisionTree,
    GaussianNB,
    LogisticRegression,
    ModelFactory,
    RandomForest,
    canonical_kind,
    logistic_loss_grad,
    make_model,
)


def _blobs(rng, n=400):
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, 3)) + 1.5 * y[:, None] * np.array([1.0, 0.0, 0.5])
    return x, y


def test_logistic_gradient_matches_finite_differences(rng):
    x, y = _blobs(rng, 50)
    w = rng.random(50) + 0.5
    theta = rng.standard_normal(4)
    _, grad = logistic_loss_grad(theta, x, y, w, 0.7)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (logistic_loss_grad(theta + e, x, y, w, 0.7)[0] - logistic_loss_grad(theta - e, x, y, w, 0.7)[0]) / (2 * h)
        assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_logistic_converges_to_stationary_point(rng):
    x, y = _blobs(rng)
    model = LogisticRegression().fit(x, y)
    assert model.converged_
    assert model.coef_[0] > 1.0
    assert abs(model.coef_[1]) < 0.3


def test_integer_weights_equal_duplication(rng):
    x, y = _blobs(rng, 60)
    w = rng.integers(1, 4, 60).astype(float)
    dup = np.repeat(np.arange(60), w.astype(int))
    for kind in ("logistic", "gnb", "tree"):
        a = make_model(kind).fit(x, y, w).score(x)
        b = make_model(kind).fit(x[dup], y[dup]).score(x)
        np.testing.assert_allclose(a, b, atol=1e-5)


@pytest.mark.parametrize("kind", ["logistic", "tree", "gnb", "forest"])
def test_scores_in_unit_interval_and_deterministic(kind, rng):
    x, y = _blobs(rng)
    params = {"tree_count": 5} if kind == "forest" else {}
    s1 = make_model(kind, params).fit(x, y).score(x)
    s2 = make_model(kind, params).fit(x, y).score(x)
    assert ((s1 >= 0) & (s1 <= 1)).all()
    np.testing.assert_array_equal(s1, s2)
    assert np.mean((s1 >= 0.5) == y) > 0.7


def test_tree_separates_one_feature():
    x = np.array([[0.0], [1.0], [2.0], [3.0]] * 10)
    y = (x[:, 0] >= 2).astype(int)
    tree = DecisionTree(max_depth=1, min_leaf_fraction=0.0).fit(x, y)
    np.testing.assert_array_equal(tree.score(x), y.astype(float))
    assert tree.used_features() == {0}


def test_single_tree_forest_equals_tree(rng):
    x, y = _blobs(rng)
    forest = RandomForest(tree_count=1, bootstrap=False, max_features="all", max_depth=4).fit(x, y)
    tree = DecisionTree(max_depth=4).fit(x, y)
    np.testing.assert_array_equal(forest.score(x), tree.score(x))


def test_gnb_variance_floor():
    x = np.array([[1.0, 0.0], [1.0, 1.0], [1.0, 2.0], [1.0, 3.0]])
    y = np.array([0, 0, 1, 1])
    s = GaussianNB().fit(x, y).score(x)
    assert np.isfinite(s).all()


def test_fit_errors():
    x = np.zeros((4, 1))
    with pytest.raises(FitError):
        LogisticRegression().fit(x, np.ones(4, dtype=int))
    with pytest.raises(FitError):
        LogisticRegression().score(x)
    with pytest.raises(FitError):
        LogisticRegression().fit(x, np.array([0, 1, 0, 1]), np.array([1, -1, 1, 1.0]))


def test_kinds_and_hyperparameters():
    assert canonical_kind("LR") == "logistic"
    assert canonical_kind("random_forest") == "forest"
    with pytest.raises(ConfigError):
        canonical_kind("xgboost")
    with pytest.raises(ConfigError):
        make_model("tree", {"depth": 3})
    assert ModelFactory("tree", {"max_depth": 2})().params["max_depth"] == 2
