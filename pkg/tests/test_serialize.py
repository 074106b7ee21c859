import numpy as np
import pytest

from multicate import (
    ForestParams,
    build_augmented_dataset,
    fit_causal_forest,
    fit_complete_pooling,
    fit_ensemble,
    fit_indicator_pooling,
    fit_ipd_meta,
    fit_local_models,
    fit_s_learner,
    fit_x_learner,
    load_model,
    save_model,
    variable_importance,
)
from multicate.errors import DataError

PARAMS = ForestParams(n_trees=6, seed=1)


def _roundtrip(tmp_path, model, X, trials=None):
    path = tmp_path / "model.json"
    save_model(model, path)
    back = load_model(path)
    np.testing.assert_array_equal(
        model.predict(X, trials=trials), back.predict(X, trials=trials)
    )
    return back


def test_single_study_models_roundtrip(tmp_path, rng):
    n = 120
    X = rng.normal(size=(n, 3))
    a = np.tile([0.0, 1.0], n // 2)
    y = (a - 0.5) * X[:, 0] + rng.normal(size=n) * 0.2
    _roundtrip(tmp_path, fit_s_learner(X, y, a, PARAMS), X)
    _roundtrip(tmp_path, fit_x_learner(X, y, a, PARAMS), X)
    cf = fit_causal_forest(X, y, a, PARAMS)
    back = _roundtrip(tmp_path, cf, X)
    np.testing.assert_array_equal(back.leaf_n1, cf.leaf_n1)
    assert back.honesty == cf.honesty


def test_split_counts_survive_roundtrip_for_importance(tmp_path, rng):
    n = 200
    X = rng.normal(size=(n, 3))
    a = np.tile([0.0, 1.0], n // 2)
    y = (a - 0.5) * np.where(X[:, 0] > 0, 2.0, 0.0) + 0.1 * rng.normal(size=n)
    cf = fit_causal_forest(X, y, a, ForestParams(n_trees=10, seed=2))
    path = tmp_path / "cf.json"
    save_model(cf, path)
    back = load_model(path)
    np.testing.assert_array_equal(
        variable_importance(cf).weights, variable_importance(back).weights
    )


def test_pooled_models_roundtrip(tmp_path, two_trial_data):
    X, tr = two_trial_data.covariates, two_trial_data.trial
    complete = fit_complete_pooling(two_trial_data, "cf", PARAMS)
    _roundtrip(tmp_path, complete, X)
    indicator = fit_indicator_pooling(two_trial_data, "x", PARAMS)
    back = _roundtrip(tmp_path, indicator, X, trials=tr)
    assert back.trial_levels == [1, 2]
    assert back.learner == "x"


def test_ensemble_models_roundtrip(tmp_path, two_trial_data):
    X, tr = two_trial_data.covariates, two_trial_data.trial
    locals_ = fit_local_models(two_trial_data, "cf", PARAMS)
    aug = build_augmented_dataset(locals_, two_trial_data)
    for kind in ("tree", "forest", "lasso"):
        model = fit_ensemble(aug, kind, PARAMS if kind == "forest" else None, seed=3)
        back = _roundtrip(tmp_path, model, X, trials=tr)
        assert back.ensemble_kind == kind


def test_meta_model_roundtrip(tmp_path, two_trial_data):
    model = fit_ipd_meta(two_trial_data, moderator_index=0)
    back = _roundtrip(
        tmp_path, model, two_trial_data.covariates, trials=two_trial_data.trial
    )
    assert back.fixed == model.fixed
    assert back.variance_components == model.variance_components


def test_malformed_file_rejected(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "something-else", "version": 1}')
    with pytest.raises(DataError, match="not a multicate-model"):
        load_model(path)
