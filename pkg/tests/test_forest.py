import numpy as np
import pytest

from multicate import ForestParams, TreeParams, fit_regression_forest, fit_regression_tree
from multicate.errors import DataError


def test_constant_outcome_predicts_constant():
    X = np.random.default_rng(0).normal(size=(60, 3))
    forest = fit_regression_forest(X, np.full(60, 2.5), ForestParams(n_trees=20, seed=1))
    assert np.all(forest.predict(X) == 2.5)


def test_degenerate_forest_equals_single_tree():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(150, 4))
    y = X[:, 0] - 2 * X[:, 2] + 0.1 * rng.normal(size=150)
    forest = fit_regression_forest(
        X, y, ForestParams(n_trees=1, bootstrap_fraction=1.0, mtry=4, seed=7)
    )
    tree = fit_regression_tree(X, y)
    np.testing.assert_array_equal(forest.predict(X), tree.predict(X))


def test_recovers_linear_signal_out_of_sample():
    rng = np.random.default_rng(2)
    n = 2000
    X = rng.normal(size=(n, 3))
    y = 3.0 * X[:, 0] + 0.1 * rng.normal(size=n)
    forest = fit_regression_forest(X, y, ForestParams(n_trees=100, seed=3))
    Xq = rng.normal(size=(500, 3))
    lo, hi = np.quantile(X[:, 0], [0.05, 0.95])
    central = (Xq[:, 0] >= lo) & (Xq[:, 0] <= hi)
    rmse = np.sqrt(np.mean((forest.predict(Xq[central]) - 3.0 * Xq[central, 0]) ** 2))
    assert rmse <= 0.5


def test_same_seed_is_deterministic_and_seeds_differ():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(200, 3))
    y = X[:, 0] + rng.normal(size=200)
    p1 = fit_regression_forest(X, y, ForestParams(n_trees=30, seed=11)).predict(X)
    p2 = fit_regression_forest(X, y, ForestParams(n_trees=30, seed=11)).predict(X)
    p3 = fit_regression_forest(X, y, ForestParams(n_trees=30, seed=12)).predict(X)
    np.testing.assert_array_equal(p1, p2)
    assert not np.array_equal(p1, p3)


def test_row_permutation_invariance_with_stable_keys():
    rng = np.random.default_rng(4)
    n = 180
    X = rng.normal(size=(n, 3))
    y = X[:, 1] + 0.2 * rng.normal(size=n)
    keys = np.arange(n)
    params = ForestParams(n_trees=25, seed=5)
    base = fit_regression_forest(X, y, params, row_keys=keys)
    perm = rng.permutation(n)
    shuffled = fit_regression_forest(X[perm], y[perm], params, row_keys=keys[perm])
    queries = rng.normal(size=(40, 3))
    np.testing.assert_array_equal(base.predict(queries), shuffled.predict(queries))


def test_training_predictions_finite_and_matching_length():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(90, 2))
    y = rng.normal(size=90)
    forest = fit_regression_forest(X, y, ForestParams(n_trees=10, seed=6))
    preds = forest.predict(X)
    assert preds.shape == (90,)
    assert np.all(np.isfinite(preds))


def test_mtry_larger_than_feature_count_rejected():
    X = np.random.default_rng(6).normal(size=(30, 2))
    with pytest.raises(ValueError):
        fit_regression_forest(X, X[:, 0], ForestParams(n_trees=2, mtry=5))


def test_group_predictions_average_to_forest_prediction():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(100, 2))
    y = X[:, 0] + rng.normal(size=100)
    forest = fit_regression_forest(X, y, ForestParams(n_trees=20, seed=8))
    groups = forest.predict_groups(X, 5)
    np.testing.assert_allclose(groups.mean(axis=0), forest.predict(X), atol=1e-12)
    with pytest.raises(ValueError):
        forest.predict_groups(X, 7)  # not divisible


def test_split_gain_threshold_stops_weak_splits():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 2))
    y = 0.01 * rng.normal(size=100)
    strict = fit_regression_tree(X, y, TreeParams(min_split_gain=1e6))
    assert strict.n_nodes == 1
