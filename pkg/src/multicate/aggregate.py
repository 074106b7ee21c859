"""Multi-trial aggregation strategies built on the single-study learners.

Five options: complete pooling, pooling with a trial indicator, and three
ensembles (tree / forest / lasso) trained on the augmented dataset of every
individual crossed with every trial-local model. The IPD meta-analysis lives
in ``mixed_model`` and shares the same CateModel interface.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import MultiTrialDataset
from .errors import DataError
from .lasso import LassoModel, fit_lasso
from .single_study import (
    CateModel,
    CausalForestModel,
    fit_causal_forest,
    fit_s_learner,
    fit_x_learner,
)
from .trees import (
    ForestParams,
    TreeModel,
    fit_regression_forest,
    fit_regression_tree,
    with_seed,
)

LEARNER_NAMES = ("s", "x", "cf")
ENSEMBLE_KINDS = ("tree", "forest", "lasso")
_LOCAL_SEED_TAG = 404
_ENSEMBLE_SEED_TAG = 405


def _one_hot(labels, levels, what="trial"):
    """K indicator columns ordered by level; empty when only one level exists."""
    if len(levels) <= 1:
        return np.empty((len(labels), 0))
    cols = np.zeros((len(labels), len(levels)))
    index = {s: j for j, s in enumerate(levels)}
    for i, s in enumerate(labels):
        j = index.get(s)
        if j is None:
            raise DataError(f"unknown {what} id {s!r}; known: {levels}")
        cols[i, j] = 1.0
    return cols


def indicator_names(levels, prefix="trial"):
    if len(levels) <= 1:
        return []
    return [f"{prefix}={s}" for s in levels]


def _fit_learner(learner, X, y, a, params, honesty=False, weight_groups=None):
    if learner == "s":
        return fit_s_learner(X, y, a, params)
    if learner == "x":
        return fit_x_learner(X, y, a, params, groups=weight_groups)
    if learner == "cf":
        return fit_causal_forest(X, y, a, params, honesty=honesty)
    raise DataError(f"unknown learner {learner!r}; expected one of {LEARNER_NAMES}")


class CompletePoolingModel(CateModel):
    """Single-study learner on all trials concatenated; trial-agnostic."""

    kind = "pooled"

    def __init__(self, inner, learner, covariate_names):
        self.inner = inner
        self.learner = learner
        self.covariate_names = tuple(covariate_names)
        self.pooling = "complete"

    def predict(self, X, trials=None):
        return self.inner.predict(np.asarray(X, dtype=np.float64))

    def _variance_design(self, X, trials):
        if not isinstance(self.inner, CausalForestModel):
            raise DataError("variance is available for causal-forest pooling only")
        return self.inner, np.asarray(X, dtype=np.float64)


class IndicatorPoolingModel(CateModel):
    """Single-study learner on [X, one-hot(trial)]; predictions are trial-specific."""

    kind = "pooled"

    def __init__(self, inner, learner, covariate_names, trial_levels):
        self.inner = inner
        self.learner = learner
        self.covariate_names = tuple(covariate_names)
        self.trial_levels = list(trial_levels)
        self.pooling = "indicator"

    def _design(self, X, trials):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        trial_list = self._trial_list(trials, X.shape[0])
        if trial_list is None and len(self.trial_levels) > 1:
            raise DataError("indicator pooling predictions require a trial id")
        if trial_list is None:
            trial_list = [self.trial_levels[0]] * X.shape[0]
        return np.column_stack([X, _one_hot(trial_list, self.trial_levels)]), trial_list

    def predict(self, X, trials=None):
        design, trial_list = self._design(X, trials)
        if self.inner.kind == "x_learner":
            return self.inner.predict(design, trials=trial_list)
        return self.inner.predict(design)

    def _variance_design(self, X, trials):
        if not isinstance(self.inner, CausalForestModel):
            raise DataError("variance is available for causal-forest pooling only")
        design, _ = self._design(X, trials)
        return self.inner, design


def fit_complete_pooling(data, learner, params=None, honesty=False):
    """Drop trial membership entirely and fit one single-study learner."""
    params = params or ForestParams()
    model = _fit_learner(
        learner, data.covariates, data.outcome, data.treatment.astype(float),
        params, honesty=honesty,
    )
    return CompletePoolingModel(model, learner, data.covariate_names)


def fit_indicator_pooling(data, learner, params=None, honesty=False):
    """Pool all trials but append trial membership as one-hot features."""
    params = params or ForestParams()
    levels = data.trial_levels
    design = np.column_stack(
        [data.covariates, _one_hot(data.trial.tolist(), levels)]
    )
    model = _fit_learner(
        learner, design, data.outcome, data.treatment.astype(float),
        params, honesty=honesty, weight_groups=data.trial,
    )
    return IndicatorPoolingModel(model, learner, data.covariate_names, levels)


def fit_local_models(data, learner, params=None, honesty=False):
    """One single-study model per trial, seeded independently per trial."""
    params = params or ForestParams()
    models = {}
    for i, s in enumerate(data.trial_levels):
        sub = data.for_trial(s)
        seed = np.random.SeedSequence(
            [params.seed & 0xFFFFFFFF, _LOCAL_SEED_TAG, i]
        ).generate_state(1)[0]
        models[s] = _fit_learner(
            learner, sub.covariates, sub.outcome, sub.treatment.astype(float),
            with_seed(params, int(seed)), honesty=honesty,
        )
    return models


@dataclass(frozen=True)
class AugmentedDataset:
    """Every individual crossed with every trial-local model's CATE estimate."""

    covariates: np.ndarray
    model_id: np.ndarray
    cate_estimate: np.ndarray
    individual_index: np.ndarray
    covariate_names: tuple
    provenance: dict

    @property
    def model_levels(self):
        return sorted(self.provenance.keys())

    @property
    def n_rows(self):
        return self.cate_estimate.shape[0]


def build_augmented_dataset(local_models, data):
    """Apply each trial-local model to all N individuals: N*K rows.

    ``local_models`` maps trial id -> fitted single-study CateModel (a list is
    accepted and zipped with the sorted trial levels).
    """
    levels = data.trial_levels
    if not isinstance(local_models, dict):
        local_models = list(local_models)
        if len(local_models) != len(levels):
            raise DataError(
                f"need exactly one local model per trial ({len(levels)}), got {len(local_models)}"
            )
        local_models = dict(zip(levels, local_models))
    if sorted(local_models.keys()) != levels:
        raise DataError(f"local model keys {sorted(local_models)} do not match trials {levels}")

    n = data.n_total
    blocks_X, blocks_sid, blocks_est, blocks_idx = [], [], [], []
    for s in levels:
        est = local_models[s].predict(data.covariates)
        blocks_X.append(data.covariates)
        blocks_sid.append(np.array([s] * n))
        blocks_est.append(np.asarray(est, dtype=np.float64))
        blocks_idx.append(np.arange(n))
    return AugmentedDataset(
        covariates=np.vstack(blocks_X),
        model_id=np.concatenate(blocks_sid),
        cate_estimate=np.concatenate(blocks_est),
        individual_index=np.concatenate(blocks_idx),
        covariate_names=data.covariate_names,
        provenance={s: s for s in levels},
    )


class EnsembleModel(CateModel):
    """Regression of augmented CATE estimates on [X, one-hot(model id)].

    Predicting for (x, trial s) evaluates the regressor at model id s, i.e.
    the trial-specific CATE informed by every other trial's model.
    """

    kind = "ensemble"

    def __init__(self, regressor, ensemble_kind, learner, covariate_names, model_levels):
        self.regressor = regressor
        self.ensemble_kind = ensemble_kind
        self.learner = learner
        self.covariate_names = tuple(covariate_names)
        self.model_levels = list(model_levels)

    def predict(self, X, trials=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        trial_list = self._trial_list(trials, X.shape[0])
        if trial_list is None:
            if len(self.model_levels) > 1:
                raise DataError("ensemble predictions require a trial (model) id")
            trial_list = [self.model_levels[0]] * X.shape[0]
        design = np.column_stack(
            [X, _one_hot(trial_list, self.model_levels, what="model")]
        )
        return self.regressor.predict(design)


def fit_ensemble(aug, kind, params=None, seed=None):
    """Fit the augmented-dataset ensemble: a tree, a forest, or a lasso.

    ``params`` carries TreeParams for the tree and ForestParams for the
    forest; the lasso picks its penalty by cross-validation.
    """
    if aug.n_rows == 0:
        raise DataError("augmented dataset is empty")
    if kind not in ENSEMBLE_KINDS:
        raise DataError(f"unknown ensemble kind {kind!r}; expected one of {ENSEMBLE_KINDS}")
    levels = aug.model_levels
    design = np.column_stack(
        [aug.covariates, _one_hot(aug.model_id.tolist(), levels, what="model")]
    )
    target = aug.cate_estimate
    if seed is None:
        seed = 0
    seed = int(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _ENSEMBLE_SEED_TAG]).generate_state(1)[0]
    )
    if kind == "tree":
        regressor = fit_regression_tree(design, target, params)
    elif kind == "forest":
        fparams = params or ForestParams()
        regressor = fit_regression_forest(design, target, with_seed(fparams, seed))
    else:
        regressor = fit_lasso(design, target, lam="cv", seed=seed)
    return EnsembleModel(regressor, kind, None, aug.covariate_names, levels)


def ensemble_feature_names(aug):
    return list(aug.covariate_names) + indicator_names(aug.model_levels, prefix="model")
