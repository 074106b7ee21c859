import numpy as np
import pytest

from multicate import (
    ForestParams,
    TreeParams,
    best_linear_projection,
    doubly_robust_scores,
    fit_causal_forest,
    fit_indicator_pooling,
    fit_interpretation_tree,
    fit_regression_forest,
    render_tree_text,
    variable_importance,
)
from multicate import MultiTrialDataset
from multicate.errors import DataError

from oracles import best_split_bruteforce


def test_importance_concentrates_on_only_split_feature(rng):
    n = 300
    X = rng.normal(size=(n, 4))
    y = np.where(X[:, 2] > 0, 3.0, -1.0)  # only feature 3 matters
    forest = fit_regression_forest(X, y, ForestParams(n_trees=30, mtry=4, seed=1))
    table = variable_importance(forest)
    assert table.weights[2] == pytest.approx(1.0)
    assert table.weights.sum() == pytest.approx(1.0)


def test_importance_weights_sum_to_one(rng):
    n = 400
    X = rng.normal(size=(n, 3))
    y = X[:, 0] + 0.5 * X[:, 1] + rng.normal(size=n)
    forest = fit_regression_forest(X, y, ForestParams(n_trees=20, seed=2))
    table = variable_importance(forest, decay=0.7, max_depth_counted=6)
    assert table.weights.sum() == pytest.approx(1.0)
    assert np.all(table.weights >= 0)


def test_importance_zero_split_forest_flagged(rng):
    X = rng.normal(size=(40, 2))
    forest = fit_regression_forest(
        X, np.full(40, 1.0), ForestParams(n_trees=5, seed=3)
    )
    table = variable_importance(forest)
    assert table.no_splits
    assert np.all(table.weights == 0)


def test_importance_sharp_moderator_ranks_x1_first(rng):
    n = 2500
    X = rng.normal(size=(n, 5))
    a = (rng.random(n) < 0.5).astype(float)
    tau = np.where(X[:, 0] >= 0, 2.0, 0.0)
    y = (a - 0.5) * tau + 0.1 * rng.normal(size=n)
    model = fit_causal_forest(X, y, a, ForestParams(n_trees=50, seed=4))
    table = variable_importance(model)
    assert np.argmax(table.weights) == 0
    assert table.weights[0] > max(table.weights[1:])


def test_importance_invariant_to_duplicating_never_split_feature(rng):
    n = 500
    X = rng.normal(size=(n, 2))
    y = np.where(X[:, 0] > 0, 2.0, -2.0)
    params = ForestParams(n_trees=20, mtry=1, seed=5)
    base = variable_importance(fit_regression_forest(X, y, params))
    # append a constant column: never splittable, never gainful
    X2 = np.column_stack([X, np.zeros(n)])
    dup = variable_importance(fit_regression_forest(X2, y, ForestParams(n_trees=20, mtry=1, seed=5)))
    assert dup.weights[2] == 0.0


def test_interpretation_tree_constant_cates_is_root_only(rng):
    X = rng.normal(size=(50, 3))
    tree = fit_interpretation_tree(np.full(50, 1.25), X)
    assert tree.n_nodes == 1
    assert tree.predict(X)[0] == 1.25


def test_interpretation_tree_step_matches_exhaustive_oracle(rng):
    n = 200
    X = rng.normal(size=(n, 3))
    cates = np.where(X[:, 0] > 0.4, 1.0, 0.0)
    tree = fit_interpretation_tree(cates, X, TreeParams(min_node_size=5))
    gain, feat, thr = best_split_bruteforce(X, cates, min_node=5)
    assert tree.feat[0] == feat == 0
    assert tree.thr[0] == thr
    left = X[X[:, 0] <= tree.thr[0]]
    assert np.all(tree.predict(left) == 0.0)


def test_interpretation_tree_leaves_reproduce_member_means(rng):
    n = 300
    X = rng.normal(size=(n, 2))
    cates = X[:, 0] * 0.5 + rng.normal(size=n) * 0.1
    tree = fit_interpretation_tree(cates, X, TreeParams(max_depth=3))
    preds = tree.predict(X)
    for v in np.unique(preds):
        assert cates[preds == v].mean() == pytest.approx(v, abs=1e-12)


def test_render_tree_text_mentions_features_and_leaf_means(rng):
    X = rng.normal(size=(100, 2))
    cates = np.where(X[:, 1] > 0, 1.0, 0.0)
    tree = fit_interpretation_tree(cates, X, TreeParams(max_depth=2))
    text = render_tree_text(tree, feature_names=["age", "score"])
    assert "score <=" in text
    assert "avg CATE" in text


def test_dr_scores_reduce_to_difference_in_means_at_degenerate_nuisances(rng):
    n = 100  # balanced arms so the identity is exact
    a = np.tile([1.0, 0.0], n // 2)
    y = rng.normal(size=n) + a
    scores = doubly_robust_scores(
        tau_hat=np.zeros(n), m_hat=np.full(n, y.mean()), y=y, a=a, pi=np.full(n, 0.5)
    )
    dim = y[a == 1].mean() - y[a == 0].mean()
    assert scores.mean() == pytest.approx(dim, abs=1e-12)


def test_dr_scores_reject_degenerate_propensities(rng):
    with pytest.raises(DataError):
        doubly_robust_scores(np.zeros(3), np.zeros(3), np.zeros(3),
                             np.array([1.0, 0.0, 1.0]), np.array([0.5, 1.0, 0.5]))


def _trial_data(rng, tau_fn, n=1500, k=2):
    X = rng.normal(size=(n, 3))
    trial = 1 + np.repeat(np.arange(k), n // k)
    a = np.tile([0, 1], n // 2)
    y = 0.5 * X[:, 1] + (a - 0.5) * tau_fn(X) + 0.1 * rng.normal(size=n)
    return MultiTrialDataset(
        trial=trial, covariates=X, treatment=a, outcome=y,
        covariate_names=("x1", "x2", "x3"),
    )


def test_blp_zero_effect_coefficients_near_zero():
    rng = np.random.default_rng(6)
    data = _trial_data(rng, lambda X: np.zeros(len(X)))
    model = fit_indicator_pooling(data, "cf", ForestParams(n_trees=50, seed=7))
    fit = best_linear_projection(model, data)
    for name, est, se, p in fit.rows():
        if name != "(Intercept)":
            assert abs(est) <= 2.5 * se + 1e-6


def test_blp_recovers_linear_projection_slope():
    rng = np.random.default_rng(7)
    data = _trial_data(rng, lambda X: 2.0 * X[:, 0], n=3000)
    model = fit_indicator_pooling(data, "cf", ForestParams(n_trees=100, seed=8))
    fit = best_linear_projection(model, data)
    assert fit["x1"] == pytest.approx(2.0, abs=0.3)


def test_blp_schema_rows(two_trial_data):
    model = fit_indicator_pooling(two_trial_data, "s", ForestParams(n_trees=5, seed=9))
    fit = best_linear_projection(model, two_trial_data)
    names = [r[0] for r in fit.rows()]
    assert names[0] == "(Intercept)"
    assert set(two_trial_data.covariate_names).issubset(names)
    assert names[-1] == "trial=2"  # one indicator per non-reference trial
    assert fit.robust


def test_blp_rejects_single_armed_trial(rng):
    n = 60
    data = MultiTrialDataset(
        trial=np.repeat([1, 2], n // 2),
        covariates=rng.normal(size=(n, 2)),
        treatment=np.concatenate([np.ones(n // 2, dtype=int), np.tile([0, 1], n // 4)]),
        outcome=rng.normal(size=n),
        covariate_names=("x1", "x2"),
    )
    model = fit_indicator_pooling(data.for_trial(2), "s", ForestParams(n_trees=3, seed=10))
    with pytest.raises(DataError, match="propensity"):
        best_linear_projection(model, data)
