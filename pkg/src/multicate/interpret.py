"""Post-fit moderation analysis: variable importance, interpretation tree,
and the best linear projection of the CATE from doubly-robust scores."""

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError
from .linear import fit_ols
from .single_study import CausalForestModel
from .trees import ForestModel, ForestParams, TreeParams, fit_regression_forest, fit_regression_tree


@dataclass
class ImportanceTable:
    """Depth-weighted, normalized split counts per feature."""

    feature_names: list
    weights: np.ndarray
    decay: float
    max_depth_counted: int
    no_splits: bool = False

    def to_frame(self):
        return pd.DataFrame(
            {"feature": self.feature_names, "importance": self.weights}
        )


def variable_importance(model, decay=0.5, max_depth_counted=4, feature_names=None):
    """Importance of feature j: sum over depths d of decay^(d-1) times the
    number of splits on j at depth d (root split = depth 1), over all trees,
    normalized to sum to one. A forest with no splits yields the zero table
    flagged ``no_splits``."""
    if isinstance(model, CausalForestModel):
        counts = model.split_counts
        p = model.feature_count
    elif isinstance(model, ForestModel):
        counts = model.split_counts[None] if model.split_counts.ndim == 2 else model.split_counts
        p = model.feature_count
    else:
        raise DataError("variable importance needs a forest-backed model")
    if decay < 0 or max_depth_counted < 1:
        raise DataError("decay must be >= 0 and max_depth_counted >= 1")

    per_feature = counts.sum(axis=0)  # (p, depth_cap)
    depth_cap = per_feature.shape[1]
    d = min(max_depth_counted, depth_cap)
    w = decay ** np.arange(d)
    raw = per_feature[:, :d] @ w
    total = raw.sum()
    if feature_names is None:
        feature_names = [f"x{j + 1}" for j in range(p)]
    if total <= 0:
        return ImportanceTable(list(feature_names), np.zeros(p), decay, max_depth_counted,
                               no_splits=True)
    return ImportanceTable(list(feature_names), raw / total, decay, max_depth_counted)


def fit_interpretation_tree(cates, X, params=None, feature_names=None):
    """CART on (covariates -> estimated CATE); leaves hold member means."""
    cates = np.asarray(cates, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != cates.shape[0]:
        raise DataError("cates vector must match the covariate rows")
    return fit_regression_tree(X, cates, params or TreeParams(max_depth=3))


def render_tree_text(tree, feature_names=None, digits=4):
    """Indented text outline of a fitted tree; leaves show the average CATE."""
    if feature_names is None:
        feature_names = [f"x{j + 1}" for j in range(tree.feature_count)]

    lines = []

    def walk(node, indent, prefix):
        if tree.feat[node] < 0:
            lines.append(
                f"{indent}{prefix}avg CATE = {tree.value[node]:.{digits}g} (n={tree.n[node]})"
            )
            return
        name = feature_names[tree.feat[node]]
        thr = tree.thr[node]
        lines.append(f"{indent}{prefix}{name} <= {thr:.{digits}g}")
        walk(int(tree.left[node]), indent + "  ", "then: ")
        walk(int(tree.right[node]), indent + "  ", "else: ")

    walk(0, "", "")
    return "\n".join(lines)


def doubly_robust_scores(tau_hat, m_hat, y, a, pi):
    """AIPW pseudo-outcomes for a randomized design with known propensities.

    mu_hat(x, a) = m_hat(x) + (a - pi) * tau_hat(x); the score is
    tau_hat + (a - pi) / (pi (1 - pi)) * (y - mu_hat).
    """
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    m_hat = np.asarray(m_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    pi = np.asarray(pi, dtype=np.float64)
    if np.any(pi <= 0) or np.any(pi >= 1):
        raise DataError("propensities must lie strictly inside (0, 1)")
    mu = m_hat + (a - pi) * tau_hat
    return tau_hat + (a - pi) / (pi * (1.0 - pi)) * (y - mu)


def best_linear_projection(model, data, covariates=None, propensities=None,
                           mhat_params=None):
    """Regress doubly-robust CATE scores on covariates and trial indicators.

    Propensities default to each trial's empirical treated fraction; the
    outcome nuisance is a regression forest of Y on the covariates. Returns a
    coefficient table (estimate, robust SE, p-value) with one row per
    covariate plus the intercept and K-1 trial indicators.
    """
    names = list(data.covariate_names)
    if covariates is None:
        covariates = names
    missing = [c for c in covariates if c not in names]
    if missing:
        raise DataError(f"unknown covariates {missing}")
    cols = [names.index(c) for c in covariates]

    levels = data.trial_levels
    fracs = data.treated_fractions()
    if propensities is not None:
        fracs = {**fracs, **dict(propensities)}
    pi = np.array([fracs[s] for s in data.trial.tolist()])
    if np.any(pi <= 0) or np.any(pi >= 1):
        bad = [s for s in levels if not 0 < fracs[s] < 1]
        raise DataError(f"trials {bad} have propensity at 0 or 1")

    tau_hat = model.predict(data.covariates, trials=data.trial)
    mhat_params = mhat_params or ForestParams(n_trees=200, seed=0)
    m_forest = fit_regression_forest(data.covariates, data.outcome, mhat_params)
    scores = doubly_robust_scores(
        tau_hat, m_forest.predict(data.covariates), data.outcome,
        data.treatment.astype(float), pi,
    )

    design = [data.covariates[:, cols]]
    design_names = list(covariates)
    for s in levels[1:]:
        design.append((data.trial == s).astype(float).reshape(-1, 1))
        design_names.append(f"trial={s}")
    return fit_ols(np.hstack(design), scores, names=design_names, robust=True)
