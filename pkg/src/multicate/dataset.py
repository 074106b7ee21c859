"""Multi-trial dataset model, CSV ingest/emit, and identifiability diagnostics."""

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DataError

REQUIRED_COLUMNS = ("trial", "treat", "y")


@dataclass(frozen=True)
class MultiTrialDataset:
    """Rows of (trial, covariates, binary treatment, continuous outcome).

    Immutable after construction; arrays are marked read-only so fitted
    models and parallel workers can share a dataset safely.
    """

    trial: np.ndarray
    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    covariate_names: tuple
    rejected_rows: tuple = ()

    def __post_init__(self):
        trial = np.asarray(self.trial)
        X = np.ascontiguousarray(self.covariates, dtype=np.float64)
        a = np.asarray(self.treatment)
        y = np.ascontiguousarray(self.outcome, dtype=np.float64)
        n = trial.shape[0]
        if n == 0:
            raise DataError("dataset has no rows")
        if X.shape != (n, len(self.covariate_names)):
            raise DataError("covariate matrix shape does not match names/rows")
        if a.shape != (n,) or y.shape != (n,):
            raise DataError("treatment/outcome must be vectors matching row count")
        if not np.all(np.isin(a, (0, 1))):
            bad = int(np.flatnonzero(~np.isin(a, (0, 1)))[0])
            raise DataError(f"treatment must be 0/1; row {bad} has {a[bad]!r}")
        if not np.all(np.isfinite(y)):
            raise DataError("outcome contains non-finite values")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain non-finite values")
        object.__setattr__(self, "trial", trial)
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "treatment", np.ascontiguousarray(a, dtype=np.int64))
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        for arr in (self.trial, self.covariates, self.treatment, self.outcome):
            arr.setflags(write=False)

    @property
    def n_total(self):
        return self.trial.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def trial_levels(self):
        return sorted(set(self.trial.tolist()))

    @property
    def k(self):
        return len(self.trial_levels)

    def trial_counts(self):
        return {s: int(np.sum(self.trial == s)) for s in self.trial_levels}

    def treated_fractions(self):
        out = {}
        for s in self.trial_levels:
            mask = self.trial == s
            out[s] = float(self.treatment[mask].mean())
        return out

    def for_trial(self, s):
        mask = self.trial == s
        if not mask.any():
            raise DataError(f"trial {s!r} has no rows")
        return MultiTrialDataset(
            trial=self.trial[mask],
            covariates=self.covariates[mask],
            treatment=self.treatment[mask],
            outcome=self.outcome[mask],
            covariate_names=self.covariate_names,
        )


@dataclass(frozen=True)
class Finding:
    trial_id: object
    assumption: str
    message: str


@dataclass
class ValidationReport:
    per_trial_propensity: list
    propensity_bound_c: float
    membership_bound_d: float
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violations


def _parse_float(token):
    token = token.strip()
    if token == "" or token.lower() in ("na", "nan"):
        return None
    return float(token)


def load_dataset(path, schema=None, impute=None):
    """Load a multi-trial CSV into a validated dataset.

    The header must contain the trial/treat/y columns (renamable through
    ``schema``); every other column is a covariate unless ``schema`` lists
    them explicitly. Rows with a missing outcome or treatment are dropped and
    recorded in ``rejected_rows`` (0-based data row indices). Missing
    covariate cells are mean-imputed when ``impute="mean"``, otherwise their
    rows are dropped as well.
    """
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    if impute not in (None, "mean"):
        raise DataError(f"unknown impute option {impute!r}")
    schema = dict(schema or {})
    colmap = {key: schema.get(key, key) for key in REQUIRED_COLUMNS}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)

    header = [h.strip() for h in header]
    missing = [colmap[k] for k in REQUIRED_COLUMNS if colmap[k] not in header]
    if missing:
        raise DataError(f"{path}: missing required columns {missing}")
    cov_names = schema.get("covariates")
    if cov_names is None:
        reserved = {colmap[k] for k in REQUIRED_COLUMNS}
        cov_names = [h for h in header if h not in reserved]
    else:
        absent = [cn for cn in cov_names if cn not in header]
        if absent:
            raise DataError(f"{path}: covariate columns not in file: {absent}")
    pos = {name: header.index(name) for name in header}

    trials, treats, ys = [], [], []
    X = np.empty((len(rows), len(cov_names)))
    keep = np.ones(len(rows), dtype=bool)
    rejected = []
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        treat_tok = row[pos[colmap["treat"]]]
        y_val = _parse_float(row[pos[colmap["y"]]])
        t_val = _parse_float(treat_tok) if treat_tok.strip() != "" else None
        if y_val is None or t_val is None:
            keep[i] = False
            rejected.append(i)
            continue
        if t_val not in (0.0, 1.0):
            raise DataError(
                f"{path}: row {i}: treatment value {treat_tok.strip()!r} is not 0/1"
            )
        cov_missing = False
        for j, cn in enumerate(cov_names):
            v = _parse_float(row[pos[cn]])
            if v is None:
                if impute == "mean":
                    X[i, j] = np.nan
                else:
                    cov_missing = True
                    break
            else:
                X[i, j] = v
        if cov_missing:
            keep[i] = False
            rejected.append(i)
            continue
        trials.append(row[pos[colmap["trial"]]].strip())
        treats.append(int(t_val))
        ys.append(y_val)

    if not any(keep):
        raise DataError(f"{path}: no usable rows (rejected: {rejected})")
    X = X[keep]
    if impute == "mean":
        for j in range(X.shape[1]):
            col = X[:, j]
            holes = np.isnan(col)
            if holes.any():
                observed = col[~holes]
                if observed.size == 0:
                    raise DataError(f"{path}: covariate {cov_names[j]!r} has no observed values")
                col[holes] = observed.mean()

    trial_arr = _maybe_int_labels(trials)
    return MultiTrialDataset(
        trial=trial_arr,
        covariates=X,
        treatment=np.array(treats),
        outcome=np.array(ys),
        covariate_names=tuple(cov_names),
        rejected_rows=tuple(rejected),
    )


def _maybe_int_labels(tokens):
    try:
        return np.array([int(t) for t in tokens])
    except ValueError:
        return np.array(tokens, dtype=object)


def write_csv(data, path):
    """Emit a dataset using shortest round-trip float formatting.

    Reloading the file reproduces every numeric value bit-identically.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "treat", "y", *data.covariate_names])
        for i in range(data.n_total):
            writer.writerow(
                [
                    data.trial[i],
                    int(data.treatment[i]),
                    repr(float(data.outcome[i])),
                    *[repr(float(v)) for v in data.covariates[i]],
                ]
            )


def _softmax_nll_grad(w_flat, X1, yidx, k, ridge):
    n, d = X1.shape
    W = w_flat.reshape(d, k)
    Z = X1 @ W
    Z -= Z.max(axis=1, keepdims=True)
    expz = np.exp(Z)
    P = expz / expz.sum(axis=1, keepdims=True)
    ll = np.log(P[np.arange(n), yidx] + 1e-300).sum()
    nll = -ll / n + 0.5 * ridge * float(w_flat @ w_flat)
    Pm = P.copy()
    Pm[np.arange(n), yidx] -= 1.0
    grad = (X1.T @ Pm) / n + ridge * W
    return nll, grad.ravel()


def fit_trial_membership_model(data, ridge=1e-4):
    """Multinomial logistic regression of trial membership on covariates.

    Returns the (n, K) matrix of fitted membership probabilities, ordered by
    sorted trial level. Deterministic: zero start, L-BFGS-B.
    """
    levels = data.trial_levels
    k = len(levels)
    X = data.covariates
    mu, sd = X.mean(axis=0), X.std(axis=0)
    Xs = (X - mu) / np.where(sd > 0, sd, 1.0)
    X1 = np.column_stack([np.ones(data.n_total), Xs])
    lookup = {s: i for i, s in enumerate(levels)}
    yidx = np.array([lookup[s] for s in data.trial.tolist()])
    w0 = np.zeros(X1.shape[1] * k)
    res = optimize.minimize(
        _softmax_nll_grad,
        w0,
        args=(X1, yidx, k, ridge),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 500},
    )
    W = res.x.reshape(X1.shape[1], k)
    Z = X1 @ W
    Z -= Z.max(axis=1, keepdims=True)
    expz = np.exp(Z)
    return expz / expz.sum(axis=1, keepdims=True)


def validate_assumptions(data, c_threshold=0.05, d_threshold=0.02, min_coverage=0.99):
    """Empirical positivity diagnostics.

    Randomization positivity: each trial's empirical treated fraction must lie
    in [c, 1-c]; a one-armed trial is a hard violation. Trial-membership
    positivity: fitted membership probabilities should lie in [d, 1-d] for at
    least ``min_coverage`` of rows per trial; failures are warnings only,
    since that assumption can be relaxed.
    """
    if not 0 < c_threshold < 0.5:
        raise DataError("c_threshold must be in (0, 0.5)")
    if not 0 < d_threshold < 0.5:
        raise DataError("d_threshold must be in (0, 0.5)")

    report = ValidationReport(
        per_trial_propensity=[],
        propensity_bound_c=float(c_threshold),
        membership_bound_d=float(d_threshold),
    )
    for s, frac in data.treated_fractions().items():
        report.per_trial_propensity.append((s, frac))
        if frac in (0.0, 1.0):
            report.violations.append(
                Finding(s, "randomization-positivity",
                        f"trial {s!r} is single-armed (treated fraction {frac:g})")
            )
        elif not c_threshold <= frac <= 1 - c_threshold:
            report.violations.append(
                Finding(s, "randomization-positivity",
                        f"trial {s!r} treated fraction {frac:.4f} outside "
                        f"[{c_threshold:g}, {1 - c_threshold:g}]")
            )

    if data.k >= 2:
        probs = fit_trial_membership_model(data)
        inside = (probs >= d_threshold) & (probs <= 1 - d_threshold)
        for i, s in enumerate(data.trial_levels):
            coverage = float(inside[:, i].mean())
            if coverage < min_coverage:
                report.warnings.append(
                    Finding(s, "membership-positivity",
                            f"P(S={s!r}|X) within [{d_threshold:g}, {1 - d_threshold:g}] "
                            f"for only {coverage:.1%} of rows (need {min_coverage:.0%})")
                )
    return report
