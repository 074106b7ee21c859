"""Numba-compiled kernels for tree building, prediction, and lasso sweeps.

Everything here operates on flat numpy arrays so it can be JIT compiled;
the friendly wrappers live in ``trees``, ``single_study`` and ``lasso``.
"""

import numpy as np
from numba import njit

# Depth bins kept in the per-tree split tallies. Splits deeper than the cap
# are folded into the last bin.
SPLIT_DEPTH_CAP = 64

_MIX = np.uint64(0x2545F4914F6CDD1D)
_SEED_MIX = np.uint64(0x9E3779B97F4A7C15)


@njit(cache=True, inline="always")
def _next_u64(state):
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return x * _MIX


@njit(cache=True)
def _sample_features(state, p, mtry, buf):
    """Draw ``mtry`` distinct feature indices into buf[:mtry], sorted ascending."""
    for j in range(p):
        buf[j] = j
    if mtry < p:
        for i in range(mtry):
            k = i + int(_next_u64(state) % np.uint64(p - i))
            tmp = buf[i]
            buf[i] = buf[k]
            buf[k] = tmp
        # insertion sort of the chosen prefix, so scans visit low indices first
        for i in range(1, mtry):
            v = buf[i]
            j = i - 1
            while j >= 0 and buf[j] > v:
                buf[j + 1] = buf[j]
                j -= 1
            buf[j + 1] = v
    return mtry


@njit(cache=True)
def build_tree(
    X,
    y,
    a,
    causal,
    honest,
    s_idx,
    e_ord,
    mtry,
    max_depth,
    min_node,
    min_gain,
    seed,
    node_feat,
    node_thr,
    node_left,
    node_right,
    node_value,
    node_n,
    node_n1,
    node_n0,
    node_parent,
    node_depth,
    split_counts,
):
    """Grow one CART-style tree over the rows referenced by ``s_idx``.

    X, y, a         full training arrays; rows are addressed through indices.
    causal          0: squared-error regression splits, leaf = mean(y).
                    1: effect-heterogeneity splits, leaf = mean(y|a=1)-mean(y|a=0),
                       each child needs >= min_node rows per arm.
    honest          1: leaf values come from ``e_ord`` rows instead of the
                       splitting rows; leaves whose estimation rows miss an arm
                       inherit the nearest ancestor value.
    s_idx           (p, m) per-feature, feature-sorted positions of the
                    splitting rows; partitioned in place.
    e_ord           estimation row positions (len 0 unless honest).
    min_gain        a split must improve the criterion by strictly more than
                    this (absolute scale).

    Node arrays are preallocated by the caller; returns the node count.
    Internal nodes have node_feat >= 0; leaves carry node_feat == -1.
    """
    p = X.shape[1]
    m = s_idx.shape[1]
    me = e_ord.shape[0]

    state = np.empty(1, dtype=np.uint64)
    st = np.uint64(seed) ^ _SEED_MIX
    if st == np.uint64(0):
        st = _SEED_MIX
    state[0] = st

    feat_buf = np.empty(p, dtype=np.int64)
    tmp_l = np.empty(m, dtype=np.int64)
    tmp_r = np.empty(m, dtype=np.int64)
    etmp_l = np.empty(max(me, 1), dtype=np.int64)
    etmp_r = np.empty(max(me, 1), dtype=np.int64)

    max_nodes = node_feat.shape[0]
    # stack rows: node id, struct start/end, est start/end
    stack = np.empty((max_nodes, 5), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    stack[0, 3] = 0
    stack[0, 4] = me
    node_parent[0] = -1
    node_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack[top, 0]
        ss = stack[top, 1]
        se = stack[top, 2]
        es = stack[top, 3]
        ee = stack[top, 4]
        depth = node_depth[node]
        n = se - ss

        # structure-side stats
        sy = 0.0
        n1 = 0
        s1 = 0.0
        s0 = 0.0
        for k in range(ss, se):
            r = s_idx[0, k]
            sy += y[r]
            if causal == 1 and a[r] > 0.5:
                n1 += 1
                s1 += y[r]
            else:
                s0 += y[r]
        n0 = n - n1

        # node value (+ reported counts) from the estimation side when honest
        if honest == 1:
            en = ee - es
            en1 = 0
            es1 = 0.0
            es0 = 0.0
            for k in range(es, ee):
                r = e_ord[k]
                if causal == 1 and a[r] > 0.5:
                    en1 += 1
                    es1 += y[r]
                else:
                    es0 += y[r]
            en0 = en - en1
            node_n[node] = en
            node_n1[node] = en1
            node_n0[node] = en0
            if causal == 1:
                if en1 > 0 and en0 > 0:
                    node_value[node] = es1 / en1 - es0 / en0
                else:
                    node_value[node] = np.nan
            else:
                node_value[node] = (es1 + es0) / en if en > 0 else np.nan
        else:
            node_n[node] = n
            node_n1[node] = n1
            node_n0[node] = n0
            if causal == 1:
                if n1 > 0 and n0 > 0:
                    node_value[node] = s1 / n1 - s0 / n0
                else:
                    node_value[node] = np.nan
            else:
                node_value[node] = sy / n

        node_feat[node] = -1
        node_thr[node] = 0.0
        node_left[node] = -1
        node_right[node] = -1

        if max_depth >= 0 and depth >= max_depth:
            continue
        if causal == 1:
            if n1 < 2 * min_node or n0 < 2 * min_node:
                continue
        else:
            if n < 2 * min_node:
                continue

        n_feats = _sample_features(state, p, mtry, feat_buf)

        best_gain = min_gain
        best_feat = -1
        best_thr = 0.0
        tau_p = 0.0
        scale = 1.0
        if causal == 1:
            tau_p = s1 / n1 - s0 / n0
            scale = tau_p * tau_p + 1.0
        else:
            scale = sy * sy / n + 1.0

        for fi in range(n_feats):
            j = feat_buf[fi]
            nl = 0
            syl = 0.0
            n1l = 0
            s1l = 0.0
            s0l = 0.0
            for k in range(ss, se - 1):
                r = s_idx[j, k]
                nl += 1
                syl += y[r]
                if causal == 1:
                    if a[r] > 0.5:
                        n1l += 1
                        s1l += y[r]
                    else:
                        s0l += y[r]
                rn = s_idx[j, k + 1]
                xl = X[r, j]
                xr = X[rn, j]
                if xl >= xr:
                    continue
                nr = n - nl
                if causal == 1:
                    n0l = nl - n1l
                    n1r = n1 - n1l
                    n0r = n0 - n0l
                    if (
                        n1l < min_node
                        or n0l < min_node
                        or n1r < min_node
                        or n0r < min_node
                    ):
                        continue
                    tl = s1l / n1l - s0l / n0l
                    tr = (s1 - s1l) / n1r - (s0 - s0l) / n0r
                    d = tl - tr
                    gain = (nl * nr) / float(n * n) * d * d
                else:
                    if nl < min_node or nr < min_node:
                        continue
                    syr = sy - syl
                    gain = syl * syl / nl + syr * syr / nr - sy * sy / n
                if gain > best_gain and gain > 1e-12 * scale:
                    thr = 0.5 * (xl + xr)
                    if thr >= xr:
                        thr = xl
                    best_gain = gain
                    best_feat = j
                    best_thr = thr

        if best_feat < 0:
            continue

        # partition every feature's segment, preserving sorted order
        f = best_feat
        thr = best_thr
        nl = 0
        for j in range(p):
            kl = 0
            kr = 0
            for k in range(ss, se):
                r = s_idx[j, k]
                if X[r, f] <= thr:
                    tmp_l[kl] = r
                    kl += 1
                else:
                    tmp_r[kr] = r
                    kr += 1
            for k in range(kl):
                s_idx[j, ss + k] = tmp_l[k]
            for k in range(kr):
                s_idx[j, ss + kl + k] = tmp_r[k]
            nl = kl
        enl = 0
        if honest == 1:
            kl = 0
            kr = 0
            for k in range(es, ee):
                r = e_ord[k]
                if X[r, f] <= thr:
                    etmp_l[kl] = r
                    kl += 1
                else:
                    etmp_r[kr] = r
                    kr += 1
            for k in range(kl):
                e_ord[es + k] = etmp_l[k]
            for k in range(kr):
                e_ord[es + kl + k] = etmp_r[k]
            enl = kl

        lid = n_nodes
        rid = n_nodes + 1
        n_nodes += 2
        node_feat[node] = f
        node_thr[node] = thr
        node_left[node] = lid
        node_right[node] = rid
        node_parent[lid] = node
        node_parent[rid] = node
        node_depth[lid] = depth + 1
        node_depth[rid] = depth + 1
        dbin = depth if depth < SPLIT_DEPTH_CAP else SPLIT_DEPTH_CAP - 1
        split_counts[f, dbin] += 1

        stack[top, 0] = rid
        stack[top, 1] = ss + nl
        stack[top, 2] = se
        stack[top, 3] = es + enl
        stack[top, 4] = ee
        top += 1
        stack[top, 0] = lid
        stack[top, 1] = ss
        stack[top, 2] = ss + nl
        stack[top, 3] = es
        stack[top, 4] = es + enl
        top += 1

    return n_nodes


@njit(cache=True)
def resolve_empty_leaves(node_value, node_parent, n_nodes):
    """Replace NaN node values with the nearest ancestor's value (honest trees)."""
    for i in range(n_nodes):
        if np.isnan(node_value[i]):
            pnode = node_parent[i]
            while pnode >= 0 and np.isnan(node_value[pnode]):
                pnode = node_parent[pnode]
            if pnode >= 0:
                node_value[i] = node_value[pnode]


@njit(cache=True)
def predict_forest(feat, thr, left, right, value, offsets, X, out):
    """Mean over trees of the leaf value each query row lands in."""
    q = X.shape[0]
    n_trees = offsets.shape[0] - 1
    for i in range(q):
        out[i] = 0.0
    for t in range(n_trees):
        root = offsets[t]
        for i in range(q):
            node = root
            while feat[node] >= 0:
                if X[i, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] += value[node]
    inv = 1.0 / n_trees
    for i in range(q):
        out[i] *= inv


@njit(cache=True)
def predict_forest_groups(feat, thr, left, right, value, offsets, X, n_groups, out):
    """Per-group mean predictions; trees are grouped by fit order, out is (n_groups, q)."""
    q = X.shape[0]
    n_trees = offsets.shape[0] - 1
    per = n_trees // n_groups
    for g in range(n_groups):
        for i in range(q):
            out[g, i] = 0.0
    for t in range(n_trees):
        g = t // per
        root = offsets[t]
        for i in range(q):
            node = root
            while feat[node] >= 0:
                if X[i, feat[node]] <= thr[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[g, i] += value[node]
    inv = 1.0 / per
    for g in range(n_groups):
        for i in range(q):
            out[g, i] *= inv


@njit(cache=True)
def filter_sorted(master, mask, out):
    """Restrict per-feature sorted row orders to the rows flagged in ``mask``."""
    p, n = master.shape
    for j in range(p):
        k = 0
        for t in range(n):
            r = master[j, t]
            if mask[r]:
                out[j, k] = r
                k += 1
    return out


@njit(cache=True)
def lasso_cd_sweep(G, c, lam, beta):
    """One cyclic coordinate-descent sweep on the standardized gram system.

    G = X'X / n, c = X'y / n (X standardized, y centered). Returns the largest
    absolute coefficient change in the sweep.
    """
    p = beta.shape[0]
    max_delta = 0.0
    for j in range(p):
        gjj = G[j, j]
        if gjj <= 0.0:
            continue
        rho = c[j] + gjj * beta[j]
        for k in range(p):
            rho -= G[j, k] * beta[k]
        if rho > lam:
            bj = (rho - lam) / gjj
        elif rho < -lam:
            bj = (rho + lam) / gjj
        else:
            bj = 0.0
        d = abs(bj - beta[j])
        if d > max_delta:
            max_delta = d
        beta[j] = bj
    return max_delta
