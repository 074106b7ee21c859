"""Command-line surface: simulate, benchmark, fit, predict, interpret, report.

Every command writes its outputs plus a manifest.json (resolved configuration,
seed, version, timestamps, and SHA-256 digests of the emitted files) into the
output directory. Exit codes: 0 success, 1 usage error, 2 data/validation
error, 3 numerical failure.
"""

import argparse
import csv
import datetime
import hashlib
import json
import os
import sys
import zlib

import numpy as np
import pandas as pd

from . import __version__
from .aggregate import (
    build_augmented_dataset,
    fit_complete_pooling,
    fit_ensemble,
    fit_indicator_pooling,
    fit_local_models,
    indicator_names,
)
from .dataset import load_dataset, write_csv
from .errors import DataError, NumericalError
from .interpret import (
    best_linear_projection,
    fit_interpretation_tree,
    render_tree_text,
    variable_importance,
)
from .mixed_model import fit_ipd_meta
from .serialize import load_model, save_model
from .simulate import (
    ALL_METHODS,
    SD_PAIR_ORDER,
    ScenarioConfig,
    generate_trials,
    run_benchmark,
)
from .single_study import estimate_cate_variance
from .trees import ForestParams, TreeParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command, config, seed, out_dir):
        self.payload = {
            "command": command,
            "config": config,
            "seed": seed,
            "tool_version": __version__,
            "started_utc": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        }
        self.out_dir = out_dir
        self.outputs = {}

    def path(self, name):
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)

    def register(self, name):
        self.outputs[name] = _sha256(os.path.join(self.out_dir, name))

    def write(self):
        self.payload["finished_utc"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        self.payload["outputs"] = self.outputs
        with open(os.path.join(self.out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(self.payload, fh, indent=2, sort_keys=True)


def _forest_params(args):
    return ForestParams(
        n_trees=args.n_trees,
        mtry=args.mtry,
        bootstrap_fraction=args.bootstrap_fraction,
        seed=args.seed,
        tree_params=TreeParams(
            max_depth=args.max_depth, min_node_size=args.min_node_size
        ),
    )


def _add_forest_flags(p):
    p.add_argument("--n-trees", type=int, default=200)
    p.add_argument("--mtry", type=int, default=None)
    p.add_argument("--bootstrap-fraction", type=float, default=0.632)
    p.add_argument("--min-node-size", type=int, default=5)
    p.add_argument("--max-depth", type=int, default=None)


def _add_schema_flags(p):
    p.add_argument("--trial-col", default="trial")
    p.add_argument("--treat-col", default="treat")
    p.add_argument("--y-col", default="y")
    p.add_argument("--covariates", default=None,
                   help="comma-separated covariate columns (default: all others)")
    p.add_argument("--impute", choices=["mean"], default=None)


def _load(args):
    schema = {"trial": args.trial_col, "treat": args.treat_col, "y": args.y_col}
    if args.covariates:
        schema["covariates"] = [c.strip() for c in args.covariates.split(",")]
    return load_dataset(args.data, schema=schema, impute=args.impute)


def build_parser():
    parser = _Parser(prog="multicate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit one generated dataset plus oracle CATEs")
    p.add_argument("--scenario", choices=["1a", "1b", "2"], default="1a")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n", type=int, default=500, help="rows per trial")
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--sigma-beta", type=float, default=0.5)
    p.add_argument("--sigma-delta", type=float, default=0.0)
    p.add_argument("--noise-variance", type=float, default=0.01)
    p.add_argument("--propensity", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("benchmark", help="run the replication grid")
    p.add_argument("--scenarios", default="1a,1b,2")
    p.add_argument("--sd-pairs", default=",".join(SD_PAIR_ORDER))
    p.add_argument("--n-reps", type=int, default=100)
    p.add_argument("--methods", default=",".join(ALL_METHODS))
    p.add_argument("--honesty", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--n", type=int, default=500, help="rows per trial")
    p.add_argument("--p", type=int, default=5)
    p.add_argument("--moderator-index", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    _add_forest_flags(p)

    p = sub.add_parser("fit", help="fit one method on a dataset CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--method", required=True, choices=list(ALL_METHODS))
    p.add_argument("--honesty", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--moderator-index", type=int, default=0)
    p.add_argument("--out-dir", default=".")
    _add_schema_flags(p)
    _add_forest_flags(p)

    p = sub.add_parser("predict", help="predict CATEs from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--trial-col", default="trial")
    p.add_argument("--with-ci", action="store_true")
    p.add_argument("--ci-groups", type=int, default=25)
    p.add_argument("--out-dir", default=".")

    p = sub.add_parser("interpret", help="importance, interpretation tree, BLP")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decay", type=float, default=0.5)
    p.add_argument("--max-depth-counted", type=int, default=4)
    p.add_argument("--tree-max-depth", type=int, default=3)
    p.add_argument("--out-dir", default=".")
    _add_schema_flags(p)

    p = sub.add_parser("report", help="rank methods from a benchmark summary")
    p.add_argument("--summary", required=True)
    p.add_argument("--out-dir", default=".")
    return parser


def _cmd_simulate(args):
    cfg = ScenarioConfig(
        scenario=args.scenario, k=args.k, n_per_trial=args.n, p=args.p,
        sigma_beta=args.sigma_beta, sigma_delta=args.sigma_delta,
        noise_variance=args.noise_variance, propensity=args.propensity,
        seed=args.seed, n_reps=1,
    )
    man = Manifest("simulate", vars(args), args.seed, args.out_dir)
    data, oracle = generate_trials(cfg, args.rep)
    write_csv(data, man.path("dataset.csv"))
    man.register("dataset.csv")
    truths = oracle.tau(data.covariates, data.trial)
    with open(man.path("truth.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "true_cate"])
        for s, t in zip(data.trial.tolist(), truths):
            writer.writerow([s, repr(float(t))])
    man.register("truth.csv")
    man.write()
    return EXIT_OK


def _config_seed(base_seed, scenario, sd_pair):
    return int(
        np.random.SeedSequence(
            [base_seed & 0xFFFFFFFF, zlib.crc32(scenario.encode()), zlib.crc32(sd_pair.encode())]
        ).generate_state(1)[0]
    )


def _cmd_benchmark(args):
    scenarios = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    pairs = [s.strip() for s in args.sd_pairs.split(",") if s.strip()]
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    grid = []
    for scen in scenarios:
        if scen == "2":
            grid.append(ScenarioConfig(
                scenario="2", k=args.k, n_per_trial=args.n, p=args.p,
                seed=_config_seed(args.seed, scen, "-"), n_reps=args.n_reps,
            ))
        else:
            for pair in pairs:
                if pair not in SD_PAIR_ORDER:
                    raise UsageError(f"unknown sd pair {pair!r}")
                grid.append(ScenarioConfig(
                    scenario=scen, k=args.k, n_per_trial=args.n, p=args.p,
                    seed=_config_seed(args.seed, scen, pair), n_reps=args.n_reps,
                ).with_sd_pair(pair))
    man = Manifest("benchmark", vars(args), args.seed, args.out_dir)
    report = run_benchmark(
        grid, methods=methods, honesty=args.honesty,
        forest_params=_forest_params(args), workers=args.workers,
        moderator_index=args.moderator_index,
    )
    report.write_summary(man.path("summary.csv"))
    man.register("summary.csv")
    report.write_replications(man.path("replications.csv"))
    man.register("replications.csv")
    man.write()
    return EXIT_OK


def _cmd_fit(args):
    data = _load(args)
    params = _forest_params(args)
    method = args.method
    if method == "meta":
        model = fit_ipd_meta(data, moderator_index=args.moderator_index)
    else:
        learner, agg = method.split("_")
        if agg == "pool":
            model = fit_complete_pooling(data, learner, params, honesty=args.honesty)
        elif agg == "indicator":
            model = fit_indicator_pooling(data, learner, params, honesty=args.honesty)
        else:
            locals_ = fit_local_models(data, learner, params, honesty=args.honesty)
            aug = build_augmented_dataset(locals_, data)
            fit_arg = params if agg == "forest" else (
                params.tree_params if agg == "tree" else None
            )
            model = fit_ensemble(aug, agg, fit_arg, seed=params.seed)
            model.learner = learner
    man = Manifest("fit", vars(args), args.seed, args.out_dir)
    save_model(model, man.path("model.json"))
    man.register("model.json")
    man.write()
    return EXIT_OK


def _read_covariate_csv(path, covariate_names, trial_col):
    if not os.path.exists(path):
        raise DataError(f"file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = list(reader)
    missing = [c for c in covariate_names if c not in header]
    if missing:
        raise DataError(f"{path}: missing covariate columns {missing}")
    idx = [header.index(c) for c in covariate_names]
    X = np.array([[float(r[j]) for j in idx] for r in rows])
    trials = None
    if trial_col in header:
        tcol = header.index(trial_col)
        tokens = [r[tcol].strip() for r in rows]
        try:
            trials = [int(t) for t in tokens]
        except ValueError:
            trials = tokens
    return X, trials


def _cmd_predict(args):
    model = load_model(args.model)
    cov_names = list(getattr(model, "covariate_names", []) or [])
    if not cov_names:
        raise DataError("model does not record covariate names; cannot map CSV columns")
    X, trials = _read_covariate_csv(args.data, cov_names, args.trial_col)
    man = Manifest("predict", vars(args), None, args.out_dir)
    est = model.predict(X, trials=trials)
    header = ["cate"]
    cols = [est]
    if trials is not None:
        header = ["trial", "cate"]
    if args.with_ci:
        interval = estimate_cate_variance(model, X, trials=trials, n_groups=args.ci_groups)
        header += ["variance", "ci_lower", "ci_upper"]
        cols += [interval.variance, interval.lower, interval.upper]
    with open(man.path("predictions.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(X.shape[0]):
            row = [trials[i]] if trials is not None else []
            row += [repr(float(c[i])) for c in cols]
            writer.writerow(row)
    man.register("predictions.csv")
    man.write()
    return EXIT_OK


def _interpret_forest(model):
    """Unwrap a fitted model to (forest-backed model, design feature names)."""
    kind = getattr(model, "kind", None)
    if kind == "causal_forest":
        return model, None
    if kind == "s_learner":
        return model.joint_outcome_forest, None
    if kind == "pooled":
        inner = model.inner
        names = list(model.covariate_names)
        if getattr(model, "pooling", "") == "indicator":
            names += indicator_names(model.trial_levels)
        if inner.kind == "causal_forest":
            return inner, names
        if inner.kind == "s_learner":
            return inner.joint_outcome_forest, names + ["treat"]
    raise DataError(
        f"variable importance is not defined for model kind {kind!r} "
        "(needs a causal forest or S-learner)"
    )


def _cmd_interpret(args):
    model = load_model(args.model)
    data = _load(args)
    man = Manifest("interpret", vars(args), None, args.out_dir)

    try:
        forest, names = _interpret_forest(model)
        table = variable_importance(
            forest, decay=args.decay, max_depth_counted=args.max_depth_counted,
            feature_names=names,
        )
        table.to_frame().to_csv(man.path("importance.csv"), index=False)
        man.register("importance.csv")
    except DataError as exc:
        print(f"importance skipped: {exc}", file=sys.stderr)

    cates = model.predict(data.covariates, trials=data.trial)
    design = [data.covariates]
    feature_names = list(data.covariate_names)
    if data.k > 1:
        for s in data.trial_levels:
            design.append((data.trial == s).astype(float).reshape(-1, 1))
        feature_names += indicator_names(data.trial_levels)
    design = np.hstack(design)
    tree = fit_interpretation_tree(
        cates, design, TreeParams(max_depth=args.tree_max_depth),
    )
    text = render_tree_text(tree, feature_names)
    with open(man.path("interpretation_tree.txt"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    man.register("interpretation_tree.txt")
    with open(man.path("interpretation_tree.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {"feature_names": feature_names, "nodes": tree.to_nested()}, fh, indent=2
        )
    man.register("interpretation_tree.json")

    blp = best_linear_projection(model, data)
    pd.DataFrame(
        blp.rows(), columns=["term", "estimate", "standard_error", "p_value"]
    ).to_csv(man.path("blp.csv"), index=False)
    man.register("blp.csv")
    man.write()
    return EXIT_OK


def _cmd_report(args):
    if not os.path.exists(args.summary):
        raise DataError(f"file not found: {args.summary}")
    df = pd.read_csv(args.summary, keep_default_na=False, na_values=[""])
    needed = {"method", "scenario", "sd_pair", "mean_mse"}
    if not needed.issubset(df.columns):
        raise DataError(f"{args.summary}: expected columns {sorted(needed)}")
    df["sd_pair"] = df["sd_pair"].astype(str)
    man = Manifest("report", vars(args), None, args.out_dir)
    ranked = df.sort_values(["scenario", "sd_pair", "mean_mse"], kind="stable").copy()
    ranked["rank"] = ranked.groupby(["scenario", "sd_pair"])["mean_mse"].rank(method="min")
    ranked.to_csv(man.path("ranked_methods.csv"), index=False)
    man.register("ranked_methods.csv")
    for scen, part in df.groupby("scenario"):
        pivot = part.pivot_table(
            index="method", columns="sd_pair", values="mean_mse", aggfunc="first",
            sort=False,
        )
        name = f"comparison_{scen}.csv"
        pivot.to_csv(man.path(name))
        man.register(name)
    man.write()
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "benchmark": _cmd_benchmark,
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "interpret": _cmd_interpret,
    "report": _cmd_report,
}


def run_cli(argv):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
