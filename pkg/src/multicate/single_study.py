"""Single-study CATE learners: S-learner, X-learner, and the causal forest.

Each fit returns a CateModel: ``predict(X, trials=None)`` maps covariate rows
(and, for trial-aware aggregates built on top, a trial id) to an estimated
conditional average treatment effect.
"""

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import _fast
from .errors import DataError
from .trees import ForestModel, ForestParams, _check_xy, _grow_forest, with_seed

_XL_SEED_TAGS = {"mu1": 11, "mu0": 12, "tau1": 13, "tau0": 14}


class CateModel:
    """Common interface of every fitted CATE estimator."""

    kind = None

    def predict(self, X, trials=None):
        raise NotImplementedError

    @staticmethod
    def _trial_list(trials, n):
        if trials is None:
            return None
        if np.isscalar(trials):
            return [trials] * n
        trials = list(np.asarray(trials).tolist())
        if len(trials) != n:
            raise DataError("trials must be a scalar or match the number of rows")
        return trials


@dataclass
class WeightRule:
    """Blending weight g(x) used by the X-learner."""

    source: str  # "constant" | "by_trial" | "logistic"
    constant: float = 0.5
    by_trial: dict = None
    overall: float = 0.5
    coef: np.ndarray = None
    intercept: float = 0.0

    def weights(self, X, trials=None):
        n = X.shape[0]
        if self.source == "constant":
            return np.full(n, self.constant)
        if self.source == "logistic":
            z = self.intercept + X @ self.coef
            return 1.0 / (1.0 + np.exp(-z))
        if trials is None:
            return np.full(n, self.overall)
        out = np.empty(n)
        for i, s in enumerate(trials):
            out[i] = self.by_trial.get(s, self.overall)
        return out


class SLearnerModel(CateModel):
    """One joint outcome forest over (covariates, treatment).

    The CATE is the forest evaluated at treatment 1 minus treatment 0.
    """

    kind = "s_learner"

    def __init__(self, joint_outcome_forest):
        self.joint_outcome_forest = joint_outcome_forest

    def predict(self, X, trials=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        d1 = np.column_stack([X, np.ones(X.shape[0])])
        d0 = np.column_stack([X, np.zeros(X.shape[0])])
        return self.joint_outcome_forest.predict(d1) - self.joint_outcome_forest.predict(d0)


class XLearnerModel(CateModel):
    """Per-arm outcome forests, cross-imputed effects, blended by g(x)."""

    kind = "x_learner"

    def __init__(self, mu1_forest, mu0_forest, tau1_forest, tau0_forest, weight_rule):
        self.mu1_forest = mu1_forest
        self.mu0_forest = mu0_forest
        self.tau1_forest = tau1_forest
        self.tau0_forest = tau0_forest
        self.weight_rule = weight_rule

    def predict(self, X, trials=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        g = self.weight_rule.weights(X, self._trial_list(trials, X.shape[0]))
        t1 = self.tau1_forest.predict(X)
        t0 = self.tau0_forest.predict(X)
        return g * t1 + (1.0 - g) * t0


class CausalForestModel(CateModel):
    """Forest of causal trees; leaves store within-leaf treated-minus-control means."""

    kind = "causal_forest"

    def __init__(self, forest, leaf_n1, leaf_n0, honesty):
        self.forest = forest
        self.leaf_n1 = leaf_n1
        self.leaf_n0 = leaf_n0
        self.honesty = honesty

    @property
    def params(self):
        return self.forest.params

    @property
    def split_counts(self):
        return self.forest.split_counts

    @property
    def feature_count(self):
        return self.forest.feature_count

    def predict(self, X, trials=None):
        return self.forest.predict(X)

    def predict_groups(self, X, n_groups):
        return self.forest.predict_groups(X, n_groups)


def _check_arms(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    vals = np.unique(a)
    if not np.all(np.isin(vals, (0.0, 1.0))):
        raise DataError("treatment must be binary 0/1")
    if vals.shape[0] < 2:
        raise DataError("both treatment arms must be present")
    return a


def fit_s_learner(X, y, a, params=None):
    """Fit one outcome forest on [X, A]; A enters as an ordinary numeric feature."""
    params = params or ForestParams()
    X, y = _check_xy(X, y)
    a = _check_arms(a)
    design = np.column_stack([X, a])
    forest = _grow_forest(design, y, np.zeros(len(y)), 0, False, params)
    return SLearnerModel(_wrap_forest(forest, params, design.shape[1]))


def _fit_logistic(X, a):
    n, p = X.shape

    def nll_grad(w):
        z = w[0] + X @ w[1:]
        pmin = -np.logaddexp(0, -z)  # log sigmoid(z)
        pmax = -np.logaddexp(0, z)  # log (1 - sigmoid(z))
        nll = -(a * pmin + (1 - a) * pmax).sum() / n
        resid = 1.0 / (1.0 + np.exp(-z)) - a
        return nll, np.concatenate([[resid.mean()], (X.T @ resid) / n])

    res = optimize.minimize(nll_grad, np.zeros(p + 1), jac=True, method="L-BFGS-B",
                            options={"maxiter": 500})
    return float(res.x[0]), res.x[1:]


def fit_x_learner(X, y, a, params=None, weight_source="per_trial_empirical", groups=None):
    """Three-step X-learner with regression forests as the base learners.

    Step 1 fits per-arm outcome forests; step 2 imputes each row's missing
    potential outcome to form individual effect estimates; step 3 regresses
    those within each arm and blends the two fits with g(x).

    weight_source: "per_trial_empirical" (default; the arm share within each
    group, or overall when no groups are given), "logistic" (estimated
    propensity), or a number for a fixed constant weight.
    """
    params = params or ForestParams()
    X, y = _check_xy(X, y)
    a = _check_arms(a)
    t_mask = a > 0.5
    n1, n0 = int(t_mask.sum()), int((~t_mask).sum())
    min_rows = params.tree_params.min_node_size
    if n1 < min_rows or n0 < min_rows:
        raise DataError(
            f"each arm needs at least min_node_size={min_rows} rows (got {n1}/{n0})"
        )

    def sub_params(tag):
        seed = np.random.SeedSequence(
            [params.seed & 0xFFFFFFFF, _XL_SEED_TAGS[tag]]
        ).generate_state(1)[0]
        return with_seed(params, int(seed))

    X1, y1 = X[t_mask], y[t_mask]
    X0, y0 = X[~t_mask], y[~t_mask]
    zeros1, zeros0 = np.zeros(n1), np.zeros(n0)
    mu1 = _wrap_forest(_grow_forest(X1, y1, zeros1, 0, False, sub_params("mu1")),
                       sub_params("mu1"), X.shape[1])
    mu0 = _wrap_forest(_grow_forest(X0, y0, zeros0, 0, False, sub_params("mu0")),
                       sub_params("mu0"), X.shape[1])

    d_treated = y1 - mu0.predict(X1)
    d_control = mu1.predict(X0) - y0
    tau1 = _wrap_forest(_grow_forest(X1, d_treated, zeros1, 0, False, sub_params("tau1")),
                        sub_params("tau1"), X.shape[1])
    tau0 = _wrap_forest(_grow_forest(X0, d_control, zeros0, 0, False, sub_params("tau0")),
                        sub_params("tau0"), X.shape[1])

    overall = float(t_mask.mean())
    if weight_source == "per_trial_empirical":
        by_trial = {}
        if groups is not None:
            groups = np.asarray(groups)
            for s in sorted(set(groups.tolist())):
                by_trial[s] = float(a[groups == s].mean())
        rule = WeightRule(source="by_trial", by_trial=by_trial, overall=overall)
    elif weight_source == "logistic":
        intercept, coef = _fit_logistic(X, a)
        rule = WeightRule(source="logistic", coef=coef, intercept=intercept)
    elif isinstance(weight_source, (int, float)):
        g = float(weight_source)
        if not 0 <= g <= 1:
            raise DataError("fixed weight must lie in [0, 1]")
        rule = WeightRule(source="constant", constant=g)
    else:
        raise DataError(f"unknown weight_source {weight_source!r}")
    return XLearnerModel(mu1, mu0, tau1, tau0, rule)


def fit_causal_forest(X, y, a, params=None, honesty=False):
    """Forest of causal trees splitting on treatment-effect heterogeneity.

    Splits maximize n_L n_R / n^2 * (tau_L - tau_R)^2 over candidate cuts,
    where tau is the within-node treated-minus-control mean; children must
    keep min_node_size rows per arm. With honesty, each tree's subsample is
    halved into structure rows (drive splits) and estimation rows (set leaf
    effects); estimation-empty leaves inherit their parent's effect.
    """
    params = params or ForestParams()
    X, y = _check_xy(X, y)
    a = _check_arms(a)
    grown = _grow_forest(X, y, a, 1, honesty, params)
    forest = ForestModel(
        feat=grown["feat"], thr=grown["thr"], left=grown["left"],
        right=grown["right"], value=grown["value"], n=grown["n"],
        offsets=grown["offsets"], split_counts=grown["split_counts"],
        params=params, feature_count=X.shape[1],
    )
    return CausalForestModel(forest, grown["n1"], grown["n0"], honesty)


def _wrap_forest(grown, params, p):
    return ForestModel(
        feat=grown["feat"], thr=grown["thr"], left=grown["left"],
        right=grown["right"], value=grown["value"], n=grown["n"],
        offsets=grown["offsets"], split_counts=grown["split_counts"],
        params=params, feature_count=p,
    )


@dataclass
class CateInterval:
    estimate: np.ndarray
    variance: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def estimate_cate_variance(model, X, trials=None, n_groups=25):
    """Grouped-tree (little bags) variance and 95% intervals for forest CATEs.

    Trees are partitioned into ``n_groups`` consecutive groups; the variance
    estimate is the between-group variance of group-mean predictions divided
    by the group count.
    """
    groups = _cate_group_predictions(model, X, trials, n_groups)
    est = groups.mean(axis=0)
    var = np.maximum(groups.var(axis=0, ddof=1) / n_groups, 0.0)
    half = 1.96 * np.sqrt(var)
    return CateInterval(estimate=est, variance=var, lower=est - half, upper=est + half)


def _cate_group_predictions(model, X, trials, n_groups):
    if isinstance(model, CausalForestModel):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        return model.predict_groups(X, n_groups)
    design_fn = getattr(model, "_variance_design", None)
    if design_fn is None:
        raise DataError(
            f"variance estimation needs a causal-forest-backed model, not {model.kind!r}"
        )
    inner, design = design_fn(X, trials)
    return _cate_group_predictions(inner, design, None, n_groups)
