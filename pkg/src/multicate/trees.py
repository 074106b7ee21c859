"""Regression trees and subsampled forests built on the compiled kernels."""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from . import _fast
from .errors import DataError

_TREE_STREAM_TAG = 101


@dataclass(frozen=True)
class TreeParams:
    """Stopping rules for a single CART tree.

    max_depth of None means unlimited. min_split_gain is on the absolute
    criterion scale (total squared-error reduction for regression trees).
    """

    max_depth: int | None = None
    min_node_size: int = 5
    min_split_gain: float = 0.0

    def __post_init__(self):
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0 or None")
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if self.min_split_gain < 0:
            raise ValueError("min_split_gain must be >= 0")


@dataclass(frozen=True)
class ForestParams:
    """Forest-level settings; mtry of None resolves to ceil(p / 3)."""

    n_trees: int = 500
    mtry: int | None = None
    bootstrap_fraction: float = 0.632
    tree_params: TreeParams = field(default_factory=TreeParams)
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")
        if not 0 < self.bootstrap_fraction <= 1:
            raise ValueError("bootstrap_fraction must be in (0, 1]")

    def resolve_mtry(self, p):
        if self.mtry is None:
            return max(1, math.ceil(p / 3))
        if self.mtry > p:
            raise ValueError(f"mtry={self.mtry} exceeds feature count {p}")
        return self.mtry


class TreeModel:
    """A fitted binary regression tree stored as flat node arrays.

    Internal nodes have feat >= 0; leaves carry feat == -1 and a value.
    """

    def __init__(self, feat, thr, left, right, value, n, feature_count):
        self.feat = feat
        self.thr = thr
        self.left = left
        self.right = right
        self.value = value
        self.n = n
        self.feature_count = feature_count

    @property
    def n_nodes(self):
        return self.feat.shape[0]

    @property
    def n_leaves(self):
        return int(np.sum(self.feat < 0))

    def predict(self, X):
        X = _as_matrix(X, self.feature_count)
        out = np.empty(X.shape[0])
        offsets = np.array([0, self.n_nodes], dtype=np.int64)
        _fast.predict_forest(
            self.feat, self.thr, self.left, self.right, self.value, offsets, X, out
        )
        return out

    def to_nested(self):
        """Nodes as [feat, thr, left, right, value, n] rows (JSON-friendly)."""
        return [
            [
                int(self.feat[i]),
                float(self.thr[i]),
                int(self.left[i]),
                int(self.right[i]),
                float(self.value[i]),
                int(self.n[i]),
            ]
            for i in range(self.n_nodes)
        ]

    @classmethod
    def from_nested(cls, nodes, feature_count):
        arr = np.asarray(nodes, dtype=float)
        return cls(
            feat=arr[:, 0].astype(np.int64),
            thr=np.ascontiguousarray(arr[:, 1]),
            left=arr[:, 2].astype(np.int64),
            right=arr[:, 3].astype(np.int64),
            value=np.ascontiguousarray(arr[:, 4]),
            n=arr[:, 5].astype(np.int64),
            feature_count=feature_count,
        )


class ForestModel:
    """A fitted forest: concatenated tree node arrays plus split tallies.

    Prediction is the arithmetic mean of the per-tree leaf values.
    split_counts has shape (n_trees, p, depth_cap); entry [t, j, d] counts
    splits on feature j at 0-based depth d in tree t.
    """

    def __init__(self, feat, thr, left, right, value, n, offsets, split_counts, params, feature_count):
        self.feat = feat
        self.thr = thr
        self.left = left
        self.right = right
        self.value = value
        self.n = n
        self.offsets = offsets
        self.split_counts = split_counts
        self.params = params
        self.feature_count = feature_count

    @property
    def n_trees(self):
        return self.offsets.shape[0] - 1

    def predict(self, X):
        X = _as_matrix(X, self.feature_count)
        out = np.empty(X.shape[0])
        _fast.predict_forest(
            self.feat, self.thr, self.left, self.right, self.value, self.offsets, X, out
        )
        return out

    def predict_groups(self, X, n_groups):
        """Predictions averaged within ``n_groups`` consecutive-tree groups."""
        if n_groups < 2:
            raise ValueError("need at least 2 tree groups")
        if self.n_trees % n_groups != 0:
            raise ValueError(
                f"n_trees={self.n_trees} is not divisible into {n_groups} groups"
            )
        X = _as_matrix(X, self.feature_count)
        out = np.empty((n_groups, X.shape[0]))
        _fast.predict_forest_groups(
            self.feat, self.thr, self.left, self.right, self.value, self.offsets,
            X, n_groups, out,
        )
        return out

    def tree(self, t):
        lo, hi = int(self.offsets[t]), int(self.offsets[t + 1])
        return TreeModel(
            feat=self.feat[lo:hi].copy(),
            thr=self.thr[lo:hi].copy(),
            left=np.where(self.left[lo:hi] >= 0, self.left[lo:hi] - lo, -1),
            right=np.where(self.right[lo:hi] >= 0, self.right[lo:hi] - lo, -1),
            value=self.value[lo:hi].copy(),
            n=self.n[lo:hi].copy(),
            feature_count=self.feature_count,
        )


def _as_matrix(X, expected_p=None):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise DataError("covariate input must be a 2-d matrix")
    if expected_p is not None and X.shape[1] != expected_p:
        raise DataError(f"expected {expected_p} features, got {X.shape[1]}")
    return X


def _check_xy(X, y):
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise DataError("y must be a vector matching the rows of X")
    if X.shape[0] < 1:
        raise DataError("empty training data")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise DataError("training data contains non-finite values")
    return X, y


def _master_order(X):
    n, p = X.shape
    order = np.empty((p, n), dtype=np.int64)
    for j in range(p):
        order[j] = np.argsort(X[:, j], kind="stable")
    return order


def _alloc_nodes(m, min_node, max_depth):
    if max_depth == 0:
        cap = 1
    else:
        cap = 2 * (m // max(min_node, 1)) + 3
        if max_depth is not None and max_depth >= 0:
            cap = min(cap, 2 ** min(max_depth + 1, 40) + 1)
    cap = max(cap, 3)
    return {
        "feat": np.empty(cap, dtype=np.int64),
        "thr": np.empty(cap, dtype=np.float64),
        "left": np.empty(cap, dtype=np.int64),
        "right": np.empty(cap, dtype=np.int64),
        "value": np.empty(cap, dtype=np.float64),
        "n": np.empty(cap, dtype=np.int64),
        "n1": np.empty(cap, dtype=np.int64),
        "n0": np.empty(cap, dtype=np.int64),
        "parent": np.empty(cap, dtype=np.int64),
        "depth": np.empty(cap, dtype=np.int64),
    }


_EMPTY_EST = np.empty(0, dtype=np.int64)


def _build_one(X, y, a, causal, honest, s_idx, e_ord, mtry, tp, seed, split_counts):
    md = -1 if tp.max_depth is None else tp.max_depth
    buf = _alloc_nodes(s_idx.shape[1] + e_ord.shape[0], tp.min_node_size, tp.max_depth)
    n_nodes = _fast.build_tree(
        X, y, a, causal, honest, s_idx, e_ord,
        mtry, md, tp.min_node_size, tp.min_split_gain, seed,
        buf["feat"], buf["thr"], buf["left"], buf["right"], buf["value"],
        buf["n"], buf["n1"], buf["n0"], buf["parent"], buf["depth"],
        split_counts,
    )
    if honest:
        _fast.resolve_empty_leaves(buf["value"], buf["parent"], n_nodes)
    return {k: v[:n_nodes] for k, v in buf.items()}, n_nodes


def _canonical_rows(X, y, a, row_keys):
    """Reorder training rows by their stable keys so fits are order-invariant."""
    if row_keys is None:
        return X, y, a
    keys = np.asarray(row_keys)
    if keys.shape[0] != X.shape[0]:
        raise DataError("row_keys length must match the number of rows")
    if np.unique(keys).shape[0] != keys.shape[0]:
        raise DataError("row_keys must be unique")
    order = np.argsort(keys, kind="stable")
    return (
        np.ascontiguousarray(X[order]),
        np.ascontiguousarray(y[order]),
        a if a is None else np.ascontiguousarray(a[order]),
    )


def _tree_seeds(forest_seed, n_trees):
    ss = np.random.SeedSequence([int(forest_seed) & 0xFFFFFFFF, _TREE_STREAM_TAG])
    return ss.spawn(n_trees)


def _grow_forest(X, y, a, causal, honesty, params):
    """Shared subsampled-forest loop for regression and causal trees."""
    n, p = X.shape
    mtry = params.resolve_mtry(p)
    tp = params.tree_params
    master = _master_order(X)
    m_sub = max(1, int(round(params.bootstrap_fraction * n)))

    parts = []
    offsets = np.zeros(params.n_trees + 1, dtype=np.int64)
    split_counts = np.zeros(
        (params.n_trees, p, _fast.SPLIT_DEPTH_CAP), dtype=np.int64
    )
    mask = np.zeros(n, dtype=np.bool_)
    for t, ss in enumerate(_tree_seeds(params.seed, params.n_trees)):
        state = ss.generate_state(3)
        rng = np.random.default_rng(np.random.SeedSequence(state[:2].tolist()))
        kernel_seed = int(state[2]) + 1
        if m_sub == n:
            sub = np.arange(n)
        else:
            sub = np.sort(rng.choice(n, size=m_sub, replace=False))
        if honesty:
            perm = rng.permutation(sub)
            half = (m_sub + 1) // 2
            struct = np.sort(perm[:half])
            est = np.sort(perm[half:])
            for name, half_idx in (("structure", struct), ("estimation", est)):
                arms = a[half_idx]
                if arms.min() == arms.max():
                    raise DataError(
                        f"honest subsample {name} half contains a single treatment arm"
                    )
            e_ord = est.copy()
        else:
            struct = sub
            e_ord = _EMPTY_EST
        mask[:] = False
        mask[struct] = True
        s_idx = np.empty((p, struct.shape[0]), dtype=np.int64)
        _fast.filter_sorted(master, mask, s_idx)
        buf, n_nodes = _build_one(
            X, y, a, causal, 1 if honesty else 0, s_idx, e_ord,
            mtry, tp, kernel_seed, split_counts[t],
        )
        parts.append(buf)
        offsets[t + 1] = offsets[t] + n_nodes

    def cat(key, shift=False):
        arrs = []
        for t, buf in enumerate(parts):
            arr = buf[key]
            if shift:
                arr = np.where(arr >= 0, arr + offsets[t], -1)
            arrs.append(arr)
        return np.ascontiguousarray(np.concatenate(arrs))

    return {
        "feat": cat("feat"),
        "thr": cat("thr"),
        "left": cat("left", shift=True),
        "right": cat("right", shift=True),
        "value": cat("value"),
        "n": cat("n"),
        "n1": cat("n1"),
        "n0": cat("n0"),
        "offsets": offsets,
        "split_counts": split_counts,
    }


def fit_regression_tree(X, y, params=None):
    """Greedy CART minimizing within-node squared error; leaf = mean(y)."""
    params = params or TreeParams()
    X, y = _check_xy(X, y)
    n, p = X.shape
    s_idx = _master_order(X)
    split_counts = np.zeros((p, _fast.SPLIT_DEPTH_CAP), dtype=np.int64)
    zeros = np.zeros(n)
    buf, _ = _build_one(X, y, zeros, 0, 0, s_idx, _EMPTY_EST, p, params, 1, split_counts)
    return TreeModel(
        feat=buf["feat"].copy(), thr=buf["thr"].copy(), left=buf["left"].copy(),
        right=buf["right"].copy(), value=buf["value"].copy(), n=buf["n"].copy(),
        feature_count=p,
    )


def fit_regression_forest(X, y, params=None, row_keys=None):
    """Forest of CART trees on without-replacement subsamples.

    Each tree's subsample and split-feature draws are derived from
    (params.seed, tree index), so the fit is reproducible and independent
    of scheduling. ``row_keys`` assigns stable identities to rows: fitting
    on permuted rows with the matching keys yields the identical forest.
    """
    params = params or ForestParams()
    X, y = _check_xy(X, y)
    params.resolve_mtry(X.shape[1])
    X, y, _ = _canonical_rows(X, y, None, row_keys)
    grown = _grow_forest(X, y, np.zeros(X.shape[0]), 0, False, params)
    return ForestModel(
        feat=grown["feat"], thr=grown["thr"], left=grown["left"],
        right=grown["right"], value=grown["value"], n=grown["n"],
        offsets=grown["offsets"], split_counts=grown["split_counts"],
        params=params, feature_count=X.shape[1],
    )


def with_seed(params, seed):
    """Copy of forest params with a replaced seed."""
    return replace(params, seed=int(seed))
