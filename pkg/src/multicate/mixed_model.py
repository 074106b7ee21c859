"""One-stage IPD meta-analysis: a linear mixed model fit by profiled REML.

The outcome model has fixed effects for the intercept, the moderator, up to
three further covariates, treatment, and the treatment-by-moderator
interaction, plus per-trial random intercept and random slopes for the
moderator, treatment, and the interaction (mutually independent). The CATE
for trial s is (zeta + z_s) + (theta + t_s) * x_moderator.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .errors import DataError, NumericalError
from .single_study import CateModel

LOG_RATIO_BOUNDS = (-30.0, 15.0)
RANDOM_EFFECT_NAMES = ("intercept", "moderator", "treat", "treat:moderator")
_REML_STARTS = (
    (0.0, 0.0, 0.0, 0.0),
    (-6.0, -6.0, -6.0, -6.0),
    (3.0, 3.0, 3.0, 3.0),
    (0.0, -8.0, 0.0, -8.0),
)


@dataclass
class MetaAnalysisModel(CateModel):
    """Fitted mixed model with per-trial BLUPs and variance components."""

    fixed: dict
    random: dict  # trial -> dict of RANDOM_EFFECT_NAMES
    variance_components: dict
    moderator_index: int
    fixed_names: list
    reml_criterion: float
    converged: bool

    kind = "meta"

    def predict(self, X, trials=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        trial_list = self._trial_list(trials, X.shape[0])
        if trial_list is None:
            raise DataError("meta-analysis predictions require a trial id")
        zeta = self.fixed["treat"]
        theta = self.fixed["treat:moderator"]
        x1 = X[:, self.moderator_index]
        out = np.empty(X.shape[0])
        for i, s in enumerate(trial_list):
            if s not in self.random:
                raise DataError(f"unknown trial id {s!r}; known: {sorted(self.random)}")
            re = self.random[s]
            out[i] = (zeta + re["treat"]) + (theta + re["treat:moderator"]) * x1[i]
        return out


class _RemlWorkspace:
    """Per-trial sufficient statistics for fast REML evaluations."""

    def __init__(self, Xf, U, y, trial, levels):
        self.n, self.p = Xf.shape
        self.levels = levels
        self.blocks = []
        for s in levels:
            mask = trial == s
            Us, Xs, ys = U[mask], Xf[mask], y[mask]
            self.blocks.append(
                dict(A=Us.T @ Us, B=Us.T @ Xs, c=Us.T @ ys, U=Us, X=Xs, y=ys)
            )
        self.XtX = Xf.T @ Xf
        self.Xty = Xf.T @ y
        self.yty = float(y @ y)

    def criterion_parts(self, gamma):
        """Return (logdet W, X'W^-1 X, X'W^-1 y, y'W^-1 y) for the ratios gamma."""
        sq = np.sqrt(gamma)
        t1 = self.XtX.copy()
        t2 = self.Xty.copy()
        t3 = self.yty
        logdet = 0.0
        chols = []
        for blk in self.blocks:
            C = np.eye(4) + (sq[:, None] * blk["A"] * sq[None, :])
            cf = linalg.cho_factor(C, lower=True)
            logdet += 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
            Bs = sq[:, None] * blk["B"]
            cs = sq * blk["c"]
            CB = linalg.cho_solve(cf, Bs)
            cc = linalg.cho_solve(cf, cs)
            t1 -= Bs.T @ CB
            t2 -= Bs.T @ cc
            t3 -= float(cs @ cc)
            chols.append(cf)
        return logdet, t1, t2, t3, chols


def _reml_neg2(log_gamma, ws):
    gamma = np.exp(log_gamma)
    try:
        logdet, t1, t2, t3, _ = ws.criterion_parts(gamma)
        sign, logdet_t1 = np.linalg.slogdet(t1)
        if sign <= 0:
            return 1e12
        beta = np.linalg.solve(t1, t2)
    except np.linalg.LinAlgError:
        return 1e12
    rss = t3 - float(beta @ t2)
    if not np.isfinite(rss) or rss <= 0:
        return 1e12
    df = ws.n - ws.p
    return logdet + logdet_t1 + df * np.log(rss / df)


def _fixed_design(data, moderator_index):
    X = data.covariates
    p = X.shape[1]
    if not 0 <= moderator_index < p:
        raise DataError(f"moderator_index must be in [0, {p - 1}]")
    x1 = X[:, moderator_index]
    a = data.treatment.astype(float)
    others = [j for j in range(p) if j != moderator_index][:3]
    cols = [np.ones(data.n_total), x1]
    names = ["intercept", "moderator"]
    for j in others:
        cols.append(X[:, j])
        names.append(str(data.covariate_names[j]))
    cols.append(a)
    names.append("treat")
    cols.append(x1 * a)
    names.append("treat:moderator")
    Xf = np.column_stack(cols)
    U = np.column_stack([np.ones(data.n_total), x1, a, x1 * a])
    return Xf, U, names


def fit_ipd_meta(data, moderator_index=0, tol=1e-8):
    """Fit the mixed model by maximizing the profiled restricted likelihood.

    The profile is over the four variance ratios (random-effect variance over
    residual variance), optimized on the log scale with L-BFGS-B from several
    starts and polished with Nelder-Mead. Ratios at the lower bound are
    reported as variance components pinned to zero.
    """
    if data.k < 2:
        raise DataError("IPD meta-analysis needs at least 2 trials")
    Xf, U, names = _fixed_design(data, moderator_index)
    levels = data.trial_levels
    ws = _RemlWorkspace(Xf, U, data.outcome, data.trial, levels)
    if ws.n <= ws.p + 1:
        raise DataError("not enough rows for the mixed model")

    best = None
    for start in _REML_STARTS:
        res = optimize.minimize(
            _reml_neg2, np.array(start), args=(ws,), method="L-BFGS-B",
            bounds=[LOG_RATIO_BOUNDS] * 4,
            options={"maxiter": 500, "ftol": tol, "gtol": 1e-10},
        )
        if best is None or res.fun < best.fun:
            best = res
    polish = optimize.minimize(
        _reml_neg2, best.x, args=(ws,), method="Nelder-Mead",
        options={"xatol": 1e-9, "fatol": tol, "maxiter": 2000},
    )
    if polish.fun <= best.fun:
        best = polish
    if not np.isfinite(best.fun) or best.fun >= 1e12:
        raise NumericalError(
            "REML optimization failed to find a valid variance configuration",
            best_iterate={"log_gamma": best.x.tolist(), "criterion": float(best.fun)},
        )

    log_gamma = np.clip(best.x, *LOG_RATIO_BOUNDS)
    gamma = np.exp(log_gamma)
    logdet, t1, t2, t3, chols = ws.criterion_parts(gamma)
    beta = np.linalg.solve(t1, t2)
    rss = t3 - float(beta @ t2)
    df = ws.n - ws.p
    sigma2 = rss / df

    sq = np.sqrt(gamma)
    random = {}
    for s, blk, cf in zip(levels, ws.blocks, chols):
        resid = blk["y"] - blk["X"] @ beta
        t = sq * (blk["U"].T @ resid)
        u = sq * linalg.cho_solve(cf, t)
        random[s] = dict(zip(RANDOM_EFFECT_NAMES, (float(v) for v in u)))

    pinned = log_gamma <= LOG_RATIO_BOUNDS[0] + 1e-6
    comp = {
        f"sigma2_{name}": 0.0 if pin else float(g * sigma2)
        for name, g, pin in zip(RANDOM_EFFECT_NAMES, gamma, pinned)
    }
    comp["sigma2_residual"] = float(sigma2)

    return MetaAnalysisModel(
        fixed=dict(zip(names, (float(b) for b in beta))),
        random=random,
        variance_components=comp,
        moderator_index=moderator_index,
        fixed_names=names,
        reml_criterion=float(best.fun),
        converged=bool(best.success or polish.success),
    )
