"""Ordinary least squares with classical or heteroskedasticity-robust errors."""

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import DataError, NumericalError


@dataclass
class OlsFit:
    """Coefficient table from a least-squares fit."""

    names: list
    estimates: np.ndarray
    standard_errors: np.ndarray
    p_values: np.ndarray
    df_resid: int
    residual_variance: float
    covariance: np.ndarray
    robust: bool = False

    def rows(self):
        return [
            (self.names[i], float(self.estimates[i]), float(self.standard_errors[i]),
             float(self.p_values[i]))
            for i in range(len(self.names))
        ]

    def __getitem__(self, name):
        i = self.names.index(name)
        return float(self.estimates[i])


def fit_ols(X, y, names=None, robust=False, add_intercept=True):
    """Least squares via QR with classical (default) or HC1 robust errors.

    Raises NumericalError naming the offending columns when the design is
    rank deficient after the intercept is added.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64)
    n, p = X.shape
    if y.shape[0] != n:
        raise DataError("y length must match rows of X")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("OLS inputs must be finite")

    if names is None:
        names = [f"x{j + 1}" for j in range(p)]
    names = list(names)
    if len(names) != p:
        raise DataError("names must match the number of columns")
    if add_intercept:
        M = np.column_stack([np.ones(n), X])
        names = ["(Intercept)"] + names
    else:
        M = X
    k = M.shape[1]
    if n < k:
        raise DataError(f"need at least {k} rows to fit {k} coefficients")

    Q, R = np.linalg.qr(M)
    diag = np.abs(np.diag(R))
    tol = diag.max() * max(n, k) * np.finfo(float).eps if diag.max() > 0 else 0.0
    bad = [names[i] for i in range(k) if diag[i] <= tol]
    if bad:
        raise NumericalError(f"design is rank deficient; collinear columns: {bad}")

    beta = np.linalg.solve(R, Q.T @ y)
    resid = y - M @ beta
    df = n - k
    rss = float(resid @ resid)
    sigma2 = rss / df if df > 0 else 0.0

    Rinv = np.linalg.solve(R, np.eye(k))
    xtx_inv = Rinv @ Rinv.T
    if robust:
        meat = (M * (resid**2)[:, None]).T @ M
        cov = xtx_inv @ meat @ xtx_inv
        if df > 0:
            cov *= n / df
    else:
        cov = sigma2 * xtx_inv

    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        tvals = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.inf))
    if df > 0:
        pvals = 2.0 * stats.t.sf(np.abs(tvals), df)
    else:
        pvals = np.full(k, np.nan)

    return OlsFit(
        names=names,
        estimates=beta,
        standard_errors=se,
        p_values=pvals,
        df_resid=df,
        residual_variance=sigma2,
        covariance=cov,
        robust=robust,
    )
