"""L1-penalized linear regression via cyclic coordinate descent.

The objective is (1/2n)||y - b0 - X b||^2 + lambda * ||b||_1, solved on
standardized features with an unpenalized intercept. Coefficients are
reported on the original scale.
"""

from dataclasses import dataclass

import numpy as np

from . import _fast
from .errors import DataError

CONVERGENCE_TOL = 1e-7
MAX_SWEEPS = 100_000
CV_FOLDS = 10
PATH_DECADES = 4.0
PATH_SIZE = 61
_CV_SHUFFLE_TAG = 202


@dataclass
class LassoModel:
    intercept: float
    coefficients: np.ndarray
    lam: float
    feature_means: np.ndarray
    feature_sds: np.ndarray
    objective_history: np.ndarray | None = None
    cv_lambdas: np.ndarray | None = None
    cv_errors: np.ndarray | None = None

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        return self.intercept + X @ self.coefficients


def _standardize(X):
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    safe = np.where(sds > 0, sds, 1.0)
    return (X - means) / safe, means, sds, safe


def _cd_solve(G, c, lam, beta, track_objective=False, var_y=None, l1_0=None):
    """Run sweeps until the largest coefficient change drops below tolerance."""
    history = [] if track_objective else None
    if track_objective:
        history.append(_objective(G, c, lam, beta, var_y))
    for _ in range(MAX_SWEEPS):
        delta = _fast.lasso_cd_sweep(G, c, lam, beta)
        if track_objective:
            history.append(_objective(G, c, lam, beta, var_y))
        if delta < CONVERGENCE_TOL:
            break
    return np.array(history) if track_objective else None


def _objective(G, c, lam, beta, var_y):
    return float(
        0.5 * (var_y - 2.0 * c @ beta + beta @ G @ beta) + lam * np.abs(beta).sum()
    )


def lambda_max(X, y):
    """Smallest penalty at which every coefficient is exactly zero."""
    Xs, _, _, _ = _standardize(np.asarray(X, dtype=np.float64))
    yc = y - np.mean(y)
    return float(np.max(np.abs(Xs.T @ yc)) / len(y))


def fit_lasso(X, y, lam="cv", seed=0, track_objective=False):
    """Fit the lasso at a fixed penalty, or pick it by 10-fold cross-validation.

    With lam="cv" the penalty path is log-spaced from lambda_max down four
    decades; folds are contiguous blocks of a seeded shuffle, and the
    smallest mean validation error wins (ties go to the stronger penalty).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64)
    if X.shape[0] != y.shape[0] or X.shape[0] < 2:
        raise DataError("X and y must have matching length >= 2")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("lasso inputs must be finite")

    Xs, means, sds, _ = _standardize(X)
    n, p = Xs.shape
    ybar = float(y.mean())
    yc = y - ybar
    G = (Xs.T @ Xs) / n
    c = (Xs.T @ yc) / n
    var_y = float(yc @ yc) / n

    cv_lams = cv_errs = None
    if lam == "cv":
        lam, cv_lams, cv_errs = _cross_validate(Xs, y, seed)
    lam = float(lam)
    if lam < 0:
        raise DataError("lambda must be >= 0")

    beta = np.zeros(p)
    history = _cd_solve(G, c, lam, beta, track_objective, var_y)

    safe = np.where(sds > 0, sds, 1.0)
    coef = beta / safe
    intercept = ybar - float(coef @ means)
    return LassoModel(
        intercept=intercept,
        coefficients=coef,
        lam=lam,
        feature_means=means,
        feature_sds=sds,
        objective_history=history,
        cv_lambdas=cv_lams,
        cv_errors=cv_errs,
    )


def _cross_validate(Xs, y, seed):
    n, p = Xs.shape
    lam_hi = float(np.max(np.abs(Xs.T @ (y - y.mean()))) / n)
    if lam_hi <= 0:
        return 0.0, np.zeros(1), np.zeros(1)
    path = np.geomspace(lam_hi, lam_hi * 10.0 ** (-PATH_DECADES), PATH_SIZE)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, _CV_SHUFFLE_TAG]))
    order = rng.permutation(n)
    n_folds = min(CV_FOLDS, n)
    bounds = np.linspace(0, n, n_folds + 1).astype(int)

    errs = np.zeros((n_folds, path.shape[0]))
    for f in range(n_folds):
        val = order[bounds[f] : bounds[f + 1]]
        tr_mask = np.ones(n, dtype=bool)
        tr_mask[val] = False
        Xtr, ytr = Xs[tr_mask], y[tr_mask]
        Xva, yva = Xs[val], y[val]
        mtr = Xtr.mean(axis=0)
        Xtr_c = Xtr - mtr
        b0 = float(ytr.mean())
        ntr = Xtr.shape[0]
        Gf = (Xtr_c.T @ Xtr_c) / ntr
        cf = (Xtr_c.T @ (ytr - b0)) / ntr
        beta = np.zeros(p)
        for li, lv in enumerate(path):
            _cd_solve(Gf, cf, lv, beta)
            pred = b0 + (Xva - mtr) @ beta
            errs[f, li] = float(np.mean((yva - pred) ** 2))

    mean_err = errs.mean(axis=0)
    best = int(np.argmin(mean_err))
    return float(path[best]), path, mean_err
