"""JSON persistence for fitted CATE models.

The envelope is {"format": "multicate-model", "version": 1, "model": {...}}
with a "kind"-discriminated model payload. Trees are stored as nested node
arrays [feature, threshold, left, right, value, n] with -1 marking leaves;
split tallies are recomputed from the structure on load.
"""

import json

import numpy as np

from .aggregate import CompletePoolingModel, EnsembleModel, IndicatorPoolingModel
from .errors import DataError
from .lasso import LassoModel
from .mixed_model import MetaAnalysisModel
from .single_study import CausalForestModel, SLearnerModel, WeightRule, XLearnerModel
from .trees import ForestModel, ForestParams, TreeModel, TreeParams
from . import _fast

MODEL_FORMAT = "multicate-model"
MODEL_VERSION = 1


def _py(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def _params_to_dict(params):
    return {
        "n_trees": params.n_trees,
        "mtry": params.mtry,
        "bootstrap_fraction": params.bootstrap_fraction,
        "seed": params.seed,
        "tree_params": {
            "max_depth": params.tree_params.max_depth,
            "min_node_size": params.tree_params.min_node_size,
            "min_split_gain": params.tree_params.min_split_gain,
        },
    }


def _params_from_dict(d):
    tp = d.get("tree_params", {})
    return ForestParams(
        n_trees=d["n_trees"],
        mtry=d["mtry"],
        bootstrap_fraction=d["bootstrap_fraction"],
        seed=d["seed"],
        tree_params=TreeParams(
            max_depth=tp.get("max_depth"),
            min_node_size=tp.get("min_node_size", 5),
            min_split_gain=tp.get("min_split_gain", 0.0),
        ),
    )


def _tree_to_dict(tree):
    return {"type": "tree", "feature_count": tree.feature_count, "nodes": tree.to_nested()}


def _tree_from_dict(d):
    return TreeModel.from_nested(d["nodes"], d["feature_count"])


def _recompute_split_counts(feat, left, right, offsets, p):
    n_trees = offsets.shape[0] - 1
    counts = np.zeros((n_trees, p, _fast.SPLIT_DEPTH_CAP), dtype=np.int64)
    for t in range(n_trees):
        lo = int(offsets[t])
        depth = {lo: 0}
        for node in range(lo, int(offsets[t + 1])):
            d = depth[node]
            if feat[node] >= 0:
                counts[t, feat[node], min(d, _fast.SPLIT_DEPTH_CAP - 1)] += 1
                depth[int(left[node])] = d + 1
                depth[int(right[node])] = d + 1
    return counts


def _forest_to_dict(forest):
    return {
        "type": "forest",
        "feature_count": forest.feature_count,
        "params": _params_to_dict(forest.params),
        "trees": [forest.tree(t).to_nested() for t in range(forest.n_trees)],
    }


def _forest_from_dict(d):
    trees = [TreeModel.from_nested(nodes, d["feature_count"]) for nodes in d["trees"]]
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    for t, tree in enumerate(trees):
        offsets[t + 1] = offsets[t] + tree.n_nodes
    feat = np.concatenate([t.feat for t in trees])
    left = np.concatenate(
        [np.where(t.left >= 0, t.left + offsets[i], -1) for i, t in enumerate(trees)]
    )
    right = np.concatenate(
        [np.where(t.right >= 0, t.right + offsets[i], -1) for i, t in enumerate(trees)]
    )
    return ForestModel(
        feat=feat,
        thr=np.concatenate([t.thr for t in trees]),
        left=left,
        right=right,
        value=np.concatenate([t.value for t in trees]),
        n=np.concatenate([t.n for t in trees]),
        offsets=offsets,
        split_counts=_recompute_split_counts(feat, left, right, offsets, d["feature_count"]),
        params=_params_from_dict(d["params"]),
        feature_count=d["feature_count"],
    )


def _lasso_to_dict(m):
    return {
        "type": "lasso",
        "intercept": m.intercept,
        "coefficients": m.coefficients.tolist(),
        "lambda": m.lam,
        "feature_means": m.feature_means.tolist(),
        "feature_sds": m.feature_sds.tolist(),
    }


def _lasso_from_dict(d):
    return LassoModel(
        intercept=d["intercept"],
        coefficients=np.array(d["coefficients"]),
        lam=d["lambda"],
        feature_means=np.array(d["feature_means"]),
        feature_sds=np.array(d["feature_sds"]),
    )


def _regressor_to_dict(m):
    if isinstance(m, ForestModel):
        return _forest_to_dict(m)
    if isinstance(m, TreeModel):
        return _tree_to_dict(m)
    if isinstance(m, LassoModel):
        return _lasso_to_dict(m)
    raise DataError(f"cannot serialize regressor {type(m).__name__}")


def _regressor_from_dict(d):
    return {"forest": _forest_from_dict, "tree": _tree_from_dict, "lasso": _lasso_from_dict}[
        d["type"]
    ](d)


def _weight_rule_to_dict(rule):
    return {
        "source": rule.source,
        "constant": rule.constant,
        "overall": rule.overall,
        "by_trial": [[s, g] for s, g in (rule.by_trial or {}).items()],
        "coef": None if rule.coef is None else list(rule.coef),
        "intercept": rule.intercept,
    }


def _weight_rule_from_dict(d):
    return WeightRule(
        source=d["source"],
        constant=d["constant"],
        overall=d["overall"],
        by_trial={s: g for s, g in d["by_trial"]},
        coef=None if d["coef"] is None else np.array(d["coef"]),
        intercept=d["intercept"],
    )


def model_to_dict(model):
    if isinstance(model, SLearnerModel):
        return {"kind": "s_learner", "forest": _forest_to_dict(model.joint_outcome_forest)}
    if isinstance(model, XLearnerModel):
        return {
            "kind": "x_learner",
            "mu1": _forest_to_dict(model.mu1_forest),
            "mu0": _forest_to_dict(model.mu0_forest),
            "tau1": _forest_to_dict(model.tau1_forest),
            "tau0": _forest_to_dict(model.tau0_forest),
            "weight_rule": _weight_rule_to_dict(model.weight_rule),
        }
    if isinstance(model, CausalForestModel):
        return {
            "kind": "causal_forest",
            "forest": _forest_to_dict(model.forest),
            "leaf_n1": model.leaf_n1.tolist(),
            "leaf_n0": model.leaf_n0.tolist(),
            "honesty": model.honesty,
        }
    if isinstance(model, CompletePoolingModel):
        return {
            "kind": "pooled",
            "pooling": "complete",
            "learner": model.learner,
            "covariate_names": list(model.covariate_names),
            "inner": model_to_dict(model.inner),
        }
    if isinstance(model, IndicatorPoolingModel):
        return {
            "kind": "pooled",
            "pooling": "indicator",
            "learner": model.learner,
            "covariate_names": list(model.covariate_names),
            "trial_levels": list(model.trial_levels),
            "inner": model_to_dict(model.inner),
        }
    if isinstance(model, EnsembleModel):
        return {
            "kind": "ensemble",
            "ensemble_kind": model.ensemble_kind,
            "learner": model.learner,
            "covariate_names": list(model.covariate_names),
            "model_levels": list(model.model_levels),
            "regressor": _regressor_to_dict(model.regressor),
        }
    if isinstance(model, MetaAnalysisModel):
        return {
            "kind": "meta",
            "fixed": model.fixed,
            "fixed_names": model.fixed_names,
            "random": [[s, re] for s, re in model.random.items()],
            "variance_components": model.variance_components,
            "moderator_index": model.moderator_index,
            "reml_criterion": model.reml_criterion,
            "converged": model.converged,
        }
    raise DataError(f"cannot serialize model of type {type(model).__name__}")


def model_from_dict(d):
    kind = d.get("kind")
    if kind == "s_learner":
        return SLearnerModel(_forest_from_dict(d["forest"]))
    if kind == "x_learner":
        return XLearnerModel(
            _forest_from_dict(d["mu1"]),
            _forest_from_dict(d["mu0"]),
            _forest_from_dict(d["tau1"]),
            _forest_from_dict(d["tau0"]),
            _weight_rule_from_dict(d["weight_rule"]),
        )
    if kind == "causal_forest":
        return CausalForestModel(
            _forest_from_dict(d["forest"]),
            np.array(d["leaf_n1"], dtype=np.int64),
            np.array(d["leaf_n0"], dtype=np.int64),
            d["honesty"],
        )
    if kind == "pooled" and d["pooling"] == "complete":
        return CompletePoolingModel(
            model_from_dict(d["inner"]), d["learner"], d["covariate_names"]
        )
    if kind == "pooled" and d["pooling"] == "indicator":
        return IndicatorPoolingModel(
            model_from_dict(d["inner"]), d["learner"], d["covariate_names"],
            d["trial_levels"],
        )
    if kind == "ensemble":
        return EnsembleModel(
            _regressor_from_dict(d["regressor"]), d["ensemble_kind"], d["learner"],
            d["covariate_names"], d["model_levels"],
        )
    if kind == "meta":
        return MetaAnalysisModel(
            fixed=d["fixed"],
            random={s: re for s, re in d["random"]},
            variance_components=d["variance_components"],
            moderator_index=d["moderator_index"],
            fixed_names=d["fixed_names"],
            reml_criterion=d["reml_criterion"],
            converged=d["converged"],
        )
    raise DataError(f"unknown model kind {kind!r}")


def save_model(model, path):
    payload = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "model": model_to_dict(model)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, default=_py)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != MODEL_FORMAT:
        raise DataError(f"{path}: not a {MODEL_FORMAT} file")
    if payload.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {payload.get('version')}")
    return model_from_dict(payload["model"])
