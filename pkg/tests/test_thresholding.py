import numpy as np
import pytest

from faircompose.errors import ThresholdError
from faircompose.metrics import balanced_accuracy
from faircompose.thresholding import DEFAULT_GRID, apply_threshold, tune_threshold


def test_tune_matches_brute_force(rng):
    scores = rng.random(300)
    labels = (scores + 0.3 * rng.standard_normal(300) > 0.6).astype(int)
    rule = tune_threshold(scores, labels)
    values = [balanced_accuracy((scores >= t).astype(int), labels) for t in DEFAULT_GRID]
    assert rule.balanced_accuracy == pytest.approx(max(values))
    assert rule.threshold == DEFAULT_GRID[int(np.argmax(values))]


def test_ties_go_to_smallest_threshold():
    scores = np.array([0.1, 0.9])
    labels = np.array([0, 1])
    assert tune_threshold(scores, labels).threshold == 0.11


def test_single_class_raises():
    with pytest.raises(ThresholdError):
        tune_threshold(np.array([0.2, 0.4]), np.array([1, 1]))


def test_apply_threshold_inclusive():
    np.testing.assert_array_equal(apply_threshold([0.49, 0.5, 0.51], 0.5), [0, 1, 1])
