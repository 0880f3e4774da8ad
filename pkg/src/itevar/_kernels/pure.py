"""Pure NumPy tree kernels.

Fallback backend used when the compiled extension is unavailable (or when
ITEVAR_BACKEND=python). Implements exactly the same algorithm as the
compiled core, with the same arithmetic order, so both backends produce
bit-identical forests for the same seed.

Conventions shared by both backends:

* trees are grown depth-first, left child first; node ids are preorder
* split rule is ``x <= threshold`` goes left; thresholds are midpoints
  between consecutive distinct sorted feature values
* row order inside a node is preserved by stable partitions, and the
  within-node sort key is (feature value, node position)
* sums that feed split decisions are sequential left-to-right
  accumulations (np.cumsum here, plain loops in the compiled core)
* per-tree randomness (subsample shuffle, feature subsets) comes from a
  splitmix64 stream seeded by the caller
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

MODE_REG = 0
MODE_EFF = 1


def _mix64(state: int) -> tuple[int, int]:
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    z = z ^ (z >> 31)
    return state, z


def _partial_shuffle(n: int, take: int, state: int) -> tuple[np.ndarray, int]:
    """First `take` entries of a Fisher-Yates shuffle of range(n)."""
    arr = np.arange(n, dtype=np.int32)
    for i in range(take):
        state, z = _mix64(state)
        j = i + z % (n - i)
        arr[i], arr[j] = arr[j], arr[i]
    return arr, state


def _sample_features(d: int, mtry: int, state: int) -> tuple[np.ndarray, int]:
    if mtry >= d:
        return np.arange(d, dtype=np.int64), state
    idx = np.arange(d, dtype=np.int64)
    for i in range(mtry):
        state, z = _mix64(state)
        j = i + z % (d - i)
        idx[i], idx[j] = idx[j], idx[i]
    cand = np.sort(idx[:mtry])
    return cand, state


def _seqsum(a: np.ndarray) -> float:
    # Sequential accumulation; matches the compiled core's plain loop.
    return float(np.cumsum(a)[-1]) if a.size else 0.0


def _best_split(xnode, target, rows, cands, min_node, low_mask=None):
    """Exact split search: returns (gain, feature, threshold) or None.

    gain is sum over children of (sum target)^2 / size; the caller
    compares it against the parent value (sum target)^2 / m.

    low_mask (effect trees only) marks rows with below-node-mean
    treatment residual; each child must then hold at least min_node rows
    from both sides of that mean, which keeps enough treatment variation
    in every leaf.
    """
    m = rows.size
    best = None
    for f in cands:
        v = xnode[rows, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ts = target[rows[order]]
        pref = np.cumsum(ts)
        total = pref[-1]
        k = np.arange(1, m, dtype=np.int64)
        sl = pref[:-1]
        sr = total - sl
        gains = sl * sl / k + sr * sr / (m - k)
        valid = (vs[1:] > vs[:-1]) & (k >= min_node) & (m - k >= min_node)
        if low_mask is not None:
            low = low_mask[rows[order]].astype(np.int64)
            n_low = int(low.sum())
            left_low = np.cumsum(low)[:-1]
            left_high = k - left_low
            right_low = n_low - left_low
            right_high = (m - k) - right_low
            valid &= ((left_low >= min_node) & (left_high >= min_node) &
                      (right_low >= min_node) & (right_high >= min_node))
        if not valid.any():
            continue
        gains = np.where(valid, gains, -np.inf)
        pos = int(np.argmax(gains))
        g = float(gains[pos])
        if best is None or g > best[0]:
            thr = (float(vs[pos]) + float(vs[pos + 1])) * 0.5
            best = (g, int(f), thr)
    return best


def build_tree(X, t0, t1, mode, sub_size, j1_size, min_node, mtry, max_depth, seed):
    """Grow one honest tree and return its packed arrays.

    X: (n, d) float64 features for the full training set.
    t0/t1: full-length targets (regression: t0 = y; effect: t0 = centered
    outcome, t1 = centered treatment).
    Returns (feat, thr, left, right, leaf_val, leaf_cnt, sub_sorted,
    j1_sorted, j2_rows, j2_leaf).
    """
    n, d = X.shape
    state = int(seed) & _MASK
    perm, state = _partial_shuffle(n, sub_size, state)
    j1 = perm[:j1_size].copy()
    j2 = perm[j1_size:sub_size].copy()

    xnode = np.ascontiguousarray(X[j1])
    if mode == MODE_REG:
        y = np.ascontiguousarray(t0[j1])
    else:
        yt = np.ascontiguousarray(t0[j1])
        at = np.ascontiguousarray(t1[j1])

    feat, thr, left, right = [], [], [], []
    rows_buf = np.arange(j1_size, dtype=np.int64)
    # stack entries: (start, end, depth, parent, is_left)
    stack = [(0, j1_size, 0, -1, False)]
    while stack:
        start, end, depth, parent, isleft = stack.pop()
        nid = len(feat)
        if parent >= 0:
            if isleft:
                left[parent] = nid
            else:
                right[parent] = nid
        rows = rows_buf[start:end]
        m = end - start

        split = None
        can_split = m >= 2 * min_node and (max_depth < 0 or depth < max_depth)
        if can_split:
            if mode == MODE_REG:
                ynode = y[rows]
                if float(ynode.max()) != float(ynode.min()):
                    target = y
                    s = _seqsum(ynode)
                    parent_gain = s * s / m
                    cands, state = _sample_features(d, mtry, state)
                    split = _best_split(xnode, target, rows, cands, min_node)
                    if split is not None and not split[0] > parent_gain:
                        split = None
            else:
                anode = at[rows]
                if float(anode.max()) != float(anode.min()):
                    mean_a = _seqsum(anode) / m
                    mean_y = _seqsum(yt[rows]) / m
                    ac = anode - mean_a
                    yc = yt[rows] - mean_y
                    saa = _seqsum(ac * ac)
                    tau = _seqsum(ac * yc) / saa
                    denom_bar = saa / m
                    rho_node = ac * (yc - ac * tau) / denom_bar
                    rho = np.zeros(j1_size)
                    rho[rows] = rho_node
                    low_mask = np.zeros(j1_size, dtype=bool)
                    low_mask[rows] = ac < 0
                    s = _seqsum(rho_node)
                    parent_gain = s * s / m
                    cands, state = _sample_features(d, mtry, state)
                    split = _best_split(xnode, rho, rows, cands, min_node,
                                        low_mask=low_mask)
                    if split is not None and not split[0] > parent_gain:
                        split = None

        if split is None:
            feat.append(-1)
            thr.append(0.0)
            left.append(-1)
            right.append(-1)
            continue

        _, f, t = split
        mask = xnode[rows, f] <= t
        nl = int(np.count_nonzero(mask))
        rows_buf[start:end] = np.concatenate([rows[mask], rows[~mask]])
        feat.append(f)
        thr.append(t)
        left.append(-1)
        right.append(-1)
        mid = start + nl
        stack.append((mid, end, depth + 1, nid, False))
        stack.append((start, mid, depth + 1, nid, True))

    feat = np.asarray(feat, dtype=np.int32)
    thr = np.asarray(thr, dtype=np.float64)
    left = np.asarray(left, dtype=np.int32)
    right = np.asarray(right, dtype=np.int32)

    j2_leaf_raw = _route(feat, thr, left, right, X, j2)
    counts = np.bincount(j2_leaf_raw, minlength=feat.size)
    feat, thr, left, right, old2new = _prune(feat, thr, left, right, counts)
    j2_leaf_raw = old2new[j2_leaf_raw]

    order = np.argsort(j2, kind="stable")
    j2_rows = j2[order]
    j2_leaf = j2_leaf_raw[order].astype(np.int32)

    nn = feat.size
    leaf_cnt = np.bincount(j2_leaf, minlength=nn).astype(np.int32)
    leaf_val = np.zeros(nn)
    if mode == MODE_REG:
        np.add.at(leaf_val, j2_leaf, t0[j2_rows])
        nz = leaf_cnt > 0
        leaf_val[nz] = leaf_val[nz] / leaf_cnt[nz]

    sub_sorted = np.sort(perm[:sub_size])
    j1_sorted = np.sort(j1)
    return (feat, thr, left, right, leaf_val, leaf_cnt,
            sub_sorted, j1_sorted, j2_rows, j2_leaf)


def _route(feat, thr, left, right, X, rows):
    cur = np.zeros(rows.size, dtype=np.int64)
    while True:
        fv = feat[cur]
        act = fv >= 0
        if not act.any():
            break
        ai = np.nonzero(act)[0]
        xv = X[rows[ai], fv[ai]]
        goleft = xv <= thr[cur[ai]]
        cur[ai] = np.where(goleft, left[cur[ai]], right[cur[ai]])
    return cur


def _prune(feat, thr, left, right, counts):
    """Drop splits with an empty honest side: a node whose child subtree
    holds no estimation rows is replaced by its other child."""
    nn = feat.size
    cnt = counts.astype(np.int64).copy()
    for v in range(nn - 1, -1, -1):
        if feat[v] >= 0:
            cnt[v] = cnt[left[v]] + cnt[right[v]]
    nf, nt, nl, nr = [], [], [], []
    old2new = np.full(nn, -1, dtype=np.int64)
    stack = [(0, -1, False)]
    while stack:
        ov, parent, isleft = stack.pop()
        while feat[ov] >= 0:
            l, r = left[ov], right[ov]
            if cnt[l] == 0:
                ov = r
            elif cnt[r] == 0:
                ov = l
            else:
                break
        nid = len(nf)
        old2new[ov] = nid
        nf.append(feat[ov])
        nt.append(thr[ov])
        nl.append(-1)
        nr.append(-1)
        if parent >= 0:
            if isleft:
                nl[parent] = nid
            else:
                nr[parent] = nid
        if feat[ov] >= 0:
            stack.append((right[ov], nid, False))
            stack.append((left[ov], nid, True))
    return (np.asarray(nf, dtype=np.int32), np.asarray(nt, dtype=np.float64),
            np.asarray(nl, dtype=np.int32), np.asarray(nr, dtype=np.int32),
            old2new)


def _walk_tree(feat, thr, left, right, X, qrows=None):
    """Leaf (local node id) for each query row of X."""
    q = X.shape[0] if qrows is None else qrows.size
    cur = np.zeros(q, dtype=np.int64)
    while True:
        fv = feat[cur]
        act = fv >= 0
        if not act.any():
            break
        ai = np.nonzero(act)[0]
        ri = ai if qrows is None else qrows[ai]
        xv = X[ri, fv[ai]]
        goleft = xv <= thr[cur[ai]]
        cur[ai] = np.where(goleft, left[cur[ai]], right[cur[ai]])
    return cur


def _member(sorted_rows, queries):
    if sorted_rows.size == 0:
        return np.zeros(queries.size, dtype=bool)
    pos = np.searchsorted(sorted_rows, queries)
    pos = np.minimum(pos, sorted_rows.size - 1)
    return sorted_rows[pos] == queries


def reg_forest_predict(feat, thr, left, right, node_off, leaf_val, X):
    q = X.shape[0]
    psum = np.zeros(q)
    used = np.zeros(q, dtype=np.int32)
    ntrees = node_off.size - 1
    for t in range(ntrees):
        o0, o1 = node_off[t], node_off[t + 1]
        leaf = _walk_tree(feat[o0:o1], thr[o0:o1], left[o0:o1], right[o0:o1], X)
        psum += leaf_val[o0:o1][leaf]
        used += 1
    return psum, used


def reg_forest_predict_oob(feat, thr, left, right, node_off, leaf_val,
                           sub_off, sub_rows, X):
    n = X.shape[0]
    qrows = np.arange(n, dtype=np.int64)
    psum = np.zeros(n)
    used = np.zeros(n, dtype=np.int32)
    ntrees = node_off.size - 1
    for t in range(ntrees):
        o0, o1 = node_off[t], node_off[t + 1]
        insub = _member(sub_rows[sub_off[t]:sub_off[t + 1]], qrows)
        out = ~insub
        if not out.any():
            continue
        rows = qrows[out]
        leaf = _walk_tree(feat[o0:o1], thr[o0:o1], left[o0:o1], right[o0:o1],
                          X, rows)
        psum[out] += leaf_val[o0:o1][leaf]
        used[out] += 1
    return psum, used


def eff_forest_accumulate(feat, thr, left, right, node_off, leaf_cnt,
                          j2_off, j2_rows, j2_leaf, X, V):
    """Fresh-query accumulation of per-leaf sums of V over the forest.

    Returns (sums, used) with sums[q, c] = sum over trees of
    (sum of V[:, c] over the leaf's honest members) / member count.
    """
    q = X.shape[0]
    ncol = V.shape[1]
    sums = np.zeros((q, ncol))
    used = np.zeros(q, dtype=np.int32)
    ntrees = node_off.size - 1
    for t in range(ntrees):
        o0, o1 = node_off[t], node_off[t + 1]
        nn = o1 - o0
        jr = j2_rows[j2_off[t]:j2_off[t + 1]]
        jl = j2_leaf[j2_off[t]:j2_off[t + 1]]
        ls = np.zeros((nn, ncol))
        np.add.at(ls, jl, V[jr])
        leaf = _walk_tree(feat[o0:o1], thr[o0:o1], left[o0:o1], right[o0:o1], X)
        k = leaf_cnt[o0:o1][leaf].astype(np.float64)
        ok = k > 0
        sums[ok] += ls[leaf[ok]] / k[ok, None]
        used[ok] += 1
    return sums, used


def eff_forest_accumulate_oob(feat, thr, left, right, node_off, leaf_cnt,
                              j2_off, j2_rows, j2_leaf, j1_off, j1_rows,
                              X, V):
    """Out-of-bag accumulation at the training rows themselves.

    Trees whose split sample contains the row are skipped; the row's own
    contribution to its leaf is removed before averaging.
    """
    n = X.shape[0]
    ncol = V.shape[1]
    qrows = np.arange(n, dtype=np.int64)
    sums = np.zeros((n, ncol))
    used = np.zeros(n, dtype=np.int32)
    ntrees = node_off.size - 1
    for t in range(ntrees):
        o0, o1 = node_off[t], node_off[t + 1]
        nn = o1 - o0
        jr = j2_rows[j2_off[t]:j2_off[t + 1]]
        jl = j2_leaf[j2_off[t]:j2_off[t + 1]]
        ls = np.zeros((nn, ncol))
        np.add.at(ls, jl, V[jr])

        inj1 = _member(j1_rows[j1_off[t]:j1_off[t + 1]], qrows)
        out = ~inj1
        if not out.any():
            continue
        rows = qrows[out]
        leaf = _walk_tree(feat[o0:o1], thr[o0:o1], left[o0:o1], right[o0:o1],
                          X, rows)
        k = leaf_cnt[o0:o1][leaf].astype(np.float64)
        num = ls[leaf]
        if jr.size:
            pos = np.minimum(np.searchsorted(jr, rows), jr.size - 1)
            selfleaf = (jr[pos] == rows) & (jl[pos] == leaf)
            if selfleaf.any():
                k = k - selfleaf
                num = num - np.where(selfleaf[:, None], V[rows], 0.0)
        ok = k > 0
        ridx = rows[ok]
        sums[ridx] += num[ok] / k[ok, None]
        used[ridx] += 1
    return sums, used
