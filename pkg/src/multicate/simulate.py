"""Monte Carlo benchmark: trial generator, ground-truth oracle, and harness.

Three scenarios share the potential-outcome model
Y(a) = m(x, s) + (2a - 1)/2 * tau(x, s) + eps:

  1a  linear outcome mean, piecewise-linear effect
      m = x1/2 + x2 + x3 + x4 + beta_s + delta_s*x1,
      tau = x1*I(x1 > 0) + beta_s + delta_s*x1
  1b  zero mean, non-linear effect
      tau = g(x1) g(x2) + beta_s + delta_s*x1, g the scaled expit
  2   effect whose functional form depends on the trial block
      trials 1-4 non-linear, 5-8 piecewise, 9-10 zero effect

Per-trial coefficients are beta_s ~ N(0, sigma_beta^2) and
delta_s ~ N(0, sigma_delta^2). RNG substreams hash (seed, rep, trial,
purpose), so parallel runs reproduce serial ones bit for bit.
"""

import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .aggregate import (
    build_augmented_dataset,
    fit_complete_pooling,
    fit_ensemble,
    fit_indicator_pooling,
    fit_local_models,
)
from .dataset import MultiTrialDataset
from .errors import DataError
from .linear import fit_ols
from .mixed_model import fit_ipd_meta
from .trees import ForestParams, with_seed

SCENARIOS = ("1a", "1b", "2")
SD_PAIRS = {
    "low-low": (0.5, 0.0),
    "med-low": (1.0, 0.0),
    "med-med": (1.0, 0.5),
    "med-high": (1.0, 1.0),
    "high-high": (3.0, 1.0),
}
SD_PAIR_ORDER = ("low-low", "med-low", "med-med", "med-high", "high-high")

AGGREGATIONS = ("pool", "indicator", "tree", "forest", "lasso")
ALL_METHODS = tuple(
    f"{learner}_{agg}" for learner in ("s", "x", "cf") for agg in AGGREGATIONS
) + ("meta",)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "1a"
    k: int = 10
    n_per_trial: int = 500
    p: int = 5
    sigma_beta: float = 0.5
    sigma_delta: float = 0.0
    noise_variance: float = 0.01
    propensity: float = 0.5
    seed: int = 0
    n_reps: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise DataError(f"scenario must be one of {SCENARIOS}")
        if self.k < 1 or self.n_per_trial < 1 or self.n_reps < 1:
            raise DataError("k, n_per_trial and n_reps must be >= 1")
        min_p = 2 if self.scenario == "1b" else 4
        if self.p < min_p:
            raise DataError(f"scenario {self.scenario} needs at least {min_p} covariates")
        if self.sigma_beta < 0 or self.sigma_delta < 0 or self.noise_variance < 0:
            raise DataError("standard deviations and noise variance must be >= 0")
        if not 0 < self.propensity < 1:
            raise DataError("propensity must be in (0, 1)")

    @property
    def sd_pair(self):
        if self.scenario == "2":
            return "-"
        for name, (sb, sd) in SD_PAIRS.items():
            if (self.sigma_beta, self.sigma_delta) == (sb, sd):
                return name
        return f"{self.sigma_beta:g}-{self.sigma_delta:g}"

    def with_sd_pair(self, name):
        sb, sd = SD_PAIRS[name]
        return replace(self, sigma_beta=sb, sigma_delta=sd)


def g_expit(x):
    """Scaled logistic curve 2 / (1 + exp(-12 (x - 1/2))), increasing into (0, 2)."""
    return 2.0 / (1.0 + np.exp(-12.0 * (np.asarray(x, dtype=np.float64) - 0.5)))


@dataclass(frozen=True)
class TrueEffectOracle:
    """Closed-form m(x, s) and tau(x, s) with the drawn per-trial coefficients."""

    scenario: str
    beta: dict
    delta: dict

    def tau(self, X, trials):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        trials = np.asarray(trials).reshape(-1)
        if trials.shape[0] == 1 and X.shape[0] > 1:
            trials = np.repeat(trials, X.shape[0])
        x1 = X[:, 0]
        if self.scenario == "1a":
            base = x1 * (x1 > 0)
            return base + self._trial_terms(trials, x1)
        if self.scenario == "1b":
            base = g_expit(x1) * g_expit(X[:, 1])
            return base + self._trial_terms(trials, x1)
        out = np.zeros(X.shape[0])
        for i, s in enumerate(trials):
            s = int(s)
            if s <= 4:
                out[i] = g_expit(x1[i]) * g_expit(X[i, 1])
            elif s <= 8:
                out[i] = x1[i] if x1[i] > 0 else 0.0
        return out

    def m(self, X, trials):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        trials = np.asarray(trials).reshape(-1)
        if trials.shape[0] == 1 and X.shape[0] > 1:
            trials = np.repeat(trials, X.shape[0])
        x1 = X[:, 0]
        if self.scenario == "1b":
            return np.zeros(X.shape[0])
        base = x1 / 2.0 + X[:, 1] + X[:, 2] + X[:, 3]
        if self.scenario == "2":
            return base
        return base + self._trial_terms(trials, x1)

    def _trial_terms(self, trials, x1):
        out = np.empty(trials.shape[0])
        for i, s in enumerate(trials):
            s = int(s)
            out[i] = self.beta[s] + self.delta[s] * x1[i]
        return out


def true_cate(oracle, x, s):
    """Scalar ground-truth CATE for one covariate row in trial s."""
    return float(oracle.tau(np.atleast_2d(x), [s])[0])


def _substream(*entropy_words):
    words = [w & 0xFFFFFFFF if isinstance(w, int) else zlib.crc32(str(w).encode())
             for w in entropy_words]
    return np.random.default_rng(np.random.SeedSequence(words))


def generate_trials(config, rep_index, return_potentials=False):
    """Draw one multi-trial dataset and its ground-truth oracle.

    The stream depends only on (config.seed, rep_index). With
    ``return_potentials`` the materialized Y(0)/Y(1) vectors are appended.
    """
    k, n, p = config.k, config.n_per_trial, config.p
    beta, delta = {}, {}
    for s in range(1, k + 1):
        rng_c = _substream(config.seed, rep_index, s, "coef")
        if config.scenario == "2":
            beta[s] = 0.0
            delta[s] = 0.0
        else:
            beta[s] = float(rng_c.normal(0.0, config.sigma_beta))
            delta[s] = float(rng_c.normal(0.0, config.sigma_delta))
    oracle = TrueEffectOracle(scenario=config.scenario, beta=beta, delta=delta)

    noise_sd = math.sqrt(config.noise_variance)
    xs, trs, trts, y0s, y1s = [], [], [], [], []
    for s in range(1, k + 1):
        X = _substream(config.seed, rep_index, s, "x").normal(size=(n, p))
        a = (_substream(config.seed, rep_index, s, "a").random(n) < config.propensity).astype(np.int64)
        eps = _substream(config.seed, rep_index, s, "eps").normal(0.0, noise_sd, size=n)
        trials = np.full(n, s)
        tau = oracle.tau(X, trials)
        base = oracle.m(X, trials) + eps
        y0 = base - tau / 2.0
        y1 = base + tau / 2.0
        xs.append(X)
        trs.append(trials)
        trts.append(a)
        y0s.append(y0)
        y1s.append(y1)

    trial = np.concatenate(trs)
    a = np.concatenate(trts)
    y0 = np.concatenate(y0s)
    y1 = np.concatenate(y1s)
    data = MultiTrialDataset(
        trial=trial,
        covariates=np.vstack(xs),
        treatment=a,
        outcome=np.where(a == 1, y1, y0),
        covariate_names=tuple(f"x{j + 1}" for j in range(p)),
    )
    if return_potentials:
        return data, oracle, y0, y1
    return data, oracle


def compute_mse(estimates, truths):
    """Mean squared difference over individuals."""
    estimates = np.asarray(estimates, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if estimates.shape != truths.shape or estimates.size == 0:
        raise DataError("estimate and truth vectors must have equal positive length")
    return float(np.mean((estimates - truths) ** 2))


def _method_params(base_params, cfg_seed, rep, tag):
    seed = np.random.SeedSequence(
        [cfg_seed & 0xFFFFFFFF, rep, zlib.crc32(tag.encode())]
    ).generate_state(1)[0]
    return with_seed(base_params, int(seed))


def run_replication(config, rep, methods, honesty=False, forest_params=None,
                    moderator_index=0):
    """Fit every requested method on one generated dataset; returns records."""
    base = forest_params or ForestParams()
    data, oracle = generate_trials(config, rep)
    X, trials = data.covariates, data.trial
    truths = oracle.tau(X, trials)

    records = []

    def record(method, model=None, needs_trial=True, error=None):
        if error is None:
            try:
                est = model.predict(X, trials=trials if needs_trial else None)
                mse = compute_mse(est, truths)
                records.append(dict(method=method, mse=mse, error=""))
                return
            except Exception as exc:  # noqa: BLE001 - failures become report cells
                error = exc
        records.append(dict(method=method, mse=float("nan"), error=repr(error)))

    for learner in ("s", "x", "cf"):
        name = f"{learner}_pool"
        if name in methods:
            try:
                model = fit_complete_pooling(
                    data, learner, _method_params(base, config.seed, rep, name),
                    honesty=honesty,
                )
                record(name, model, needs_trial=False)
            except Exception as exc:  # noqa: BLE001
                record(name, error=exc)
        name = f"{learner}_indicator"
        if name in methods:
            try:
                model = fit_indicator_pooling(
                    data, learner, _method_params(base, config.seed, rep, name),
                    honesty=honesty,
                )
                record(name, model)
            except Exception as exc:  # noqa: BLE001
                record(name, error=exc)

        kinds = [k for k in ("tree", "forest", "lasso") if f"{learner}_{k}" in methods]
        if kinds:
            try:
                locals_ = fit_local_models(
                    data, learner,
                    _method_params(base, config.seed, rep, f"locals_{learner}"),
                    honesty=honesty,
                )
                aug = build_augmented_dataset(locals_, data)
            except Exception as exc:  # noqa: BLE001
                for kind in kinds:
                    record(f"{learner}_{kind}", error=exc)
                kinds = []
            for kind in kinds:
                name = f"{learner}_{kind}"
                try:
                    params = _method_params(base, config.seed, rep, name)
                    fit_arg = params if kind == "forest" else (
                        params.tree_params if kind == "tree" else None
                    )
                    model = fit_ensemble(aug, kind, fit_arg, seed=params.seed)
                    record(name, model)
                except Exception as exc:  # noqa: BLE001
                    record(name, error=exc)

    if "meta" in methods:
        try:
            model = fit_ipd_meta(data, moderator_index=moderator_index)
            record("meta", model)
        except Exception as exc:  # noqa: BLE001
            record("meta", error=exc)

    ordered = {m: i for i, m in enumerate(ALL_METHODS)}
    records.sort(key=lambda r: ordered[r["method"]])
    for r in records:
        r.update(scenario=config.scenario, sd_pair=config.sd_pair, rep=rep)
    return records


class BenchmarkReport:
    """Per-replication MSE records plus per-cell summaries."""

    REPLICATION_COLUMNS = ["scenario", "sd_pair", "method", "rep", "mse", "error"]
    SUMMARY_COLUMNS = ["method", "scenario", "sd_pair", "mean_mse", "sd_mse", "n_reps"]

    def __init__(self, records):
        self.records = list(records)

    def replications_frame(self):
        return pd.DataFrame(self.records, columns=self.REPLICATION_COLUMNS)

    def summary_frame(self):
        df = self.replications_frame()
        ok = df[df["error"] == ""]
        grouped = (
            ok.groupby(["method", "scenario", "sd_pair"], sort=False)["mse"]
            .agg(mean_mse="mean", sd_mse="std", n_reps="count")
            .reset_index()
        )
        order_m = {m: i for i, m in enumerate(ALL_METHODS)}
        order_sd = {s: i for i, s in enumerate(SD_PAIR_ORDER + ("-",))}

        def sort_key(col):
            if col.name == "sd_pair":
                return col.map(lambda v: order_sd.get(v, len(order_sd)))
            if col.name == "method":
                return col.map(order_m)
            return col

        grouped = grouped.sort_values(
            by=["scenario", "sd_pair", "method"], key=sort_key, kind="stable"
        ).reset_index(drop=True)
        return grouped[self.SUMMARY_COLUMNS]

    def mean_mse(self, method, scenario, sd_pair):
        df = self.summary_frame()
        row = df[
            (df["method"] == method)
            & (df["scenario"] == scenario)
            & (df["sd_pair"] == sd_pair)
        ]
        if row.empty:
            raise KeyError((method, scenario, sd_pair))
        return float(row["mean_mse"].iloc[0])

    def write_replications(self, path):
        self.replications_frame().to_csv(path, index=False, float_format=None)

    def write_summary(self, path):
        self.summary_frame().to_csv(path, index=False)

    @classmethod
    def from_replications_csv(cls, path):
        df = pd.read_csv(path, keep_default_na=False, na_values=["nan", "NaN", ""])
        df["error"] = df["error"].fillna("").astype(str)
        df["sd_pair"] = df["sd_pair"].astype(str)
        df["scenario"] = df["scenario"].astype(str)
        return cls(df.to_dict("records"))


def _worker(args):
    idx, config, rep, methods, honesty, forest_params, moderator_index = args
    return idx, run_replication(
        config, rep, methods, honesty=honesty, forest_params=forest_params,
        moderator_index=moderator_index,
    )


def run_benchmark(grid, methods=None, honesty=False, forest_params=None,
                  workers=1, moderator_index=0, progress=None):
    """Run the replication grid and collect a BenchmarkReport.

    Every (config, replication) cell is independent; with ``workers`` > 1 the
    cells run in a process pool and are reduced in task order, so the report
    is identical for any worker count. A method failure is recorded in its
    cell without aborting the run.
    """
    grid = list(grid)
    if not grid:
        raise DataError("benchmark grid is empty")
    methods = list(methods or ALL_METHODS)
    unknown = [m for m in methods if m not in ALL_METHODS]
    if unknown:
        raise DataError(f"unknown methods {unknown}; valid: {list(ALL_METHODS)}")

    tasks = [
        (i, cfg, rep, methods, honesty, forest_params, moderator_index)
        for i, (cfg, rep) in enumerate(
            (cfg, rep) for cfg in grid for rep in range(cfg.n_reps)
        )
    ]
    results = {}
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for idx, recs in pool.map(_worker, tasks, chunksize=1):
                results[idx] = recs
                if progress:
                    progress(len(results), len(tasks))
    else:
        for task in tasks:
            idx, recs = _worker(task)
            results[idx] = recs
            if progress:
                progress(len(results), len(tasks))

    records = []
    for idx in range(len(tasks)):
        records.extend(results[idx])
    return BenchmarkReport(records)


def regress_mse(report):
    """Regress per-cell average MSE on method factors and heterogeneity SDs.

    Cells from scenarios 1a/1b excluding the meta-analysis; dummy coding with
    the S-learner and complete pooling as reference levels, plus
    learner-by-aggregation interactions, the two SD parameters, and a
    scenario indicator.
    """
    df = report.summary_frame()
    df = df[(df["scenario"].isin(["1a", "1b"])) & (df["method"] != "meta")].copy()
    if df.empty:
        raise DataError("report has no scenario 1a/1b cells to regress")
    df["learner"] = df["method"].str.split("_").str[0]
    df["aggregation"] = df["method"].str.split("_").str[1]
    if df["method"].nunique() < 2 or df.groupby(["scenario", "sd_pair"]).ngroups < 2:
        raise DataError("MSE regression needs >= 2 methods and >= 2 parameter settings")
    df["sigma_beta"] = df["sd_pair"].map({k: v[0] for k, v in SD_PAIRS.items()})
    df["sigma_delta"] = df["sd_pair"].map({k: v[1] for k, v in SD_PAIRS.items()})

    cols, names = [], []
    for learner in ("x", "cf"):
        cols.append((df["learner"] == learner).astype(float).to_numpy())
        names.append(f"learner[{learner}]")
    for agg in ("indicator", "tree", "forest", "lasso"):
        cols.append((df["aggregation"] == agg).astype(float).to_numpy())
        names.append(f"aggregation[{agg}]")
    for learner in ("x", "cf"):
        for agg in ("indicator", "tree", "forest", "lasso"):
            cols.append(
                ((df["learner"] == learner) & (df["aggregation"] == agg)).astype(float).to_numpy()
            )
            names.append(f"learner[{learner}]:aggregation[{agg}]")
    cols.append(df["sigma_beta"].to_numpy(dtype=float))
    names.append("sigma_beta")
    cols.append(df["sigma_delta"].to_numpy(dtype=float))
    names.append("sigma_delta")
    cols.append((df["scenario"] == "1b").astype(float).to_numpy())
    names.append("scenario[1b]")

    design = np.column_stack(cols)
    keep = [j for j in range(design.shape[1]) if np.ptp(design[:, j]) > 0]
    design = design[:, keep]
    names = [names[j] for j in keep]
    return fit_ols(design, df["mean_mse"].to_numpy(dtype=float), names=names)
