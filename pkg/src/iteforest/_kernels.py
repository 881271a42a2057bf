"""Compiled kernels for growing and traversing trees.

Trees are stored as flat arrays.  ``feature[k] < 0`` marks a leaf; internal
nodes send ``x[feature] <= threshold`` to ``left`` and the rest to ``right``.
Child indices are local to the tree; forests concatenate trees and keep an
``offsets`` array.
"""

import numpy as np
from numba import njit

MODE_VARIANCE = 0
MODE_BIVARIATE = 1
MODE_TREATMENT = 2

# split scores closer than this (relative) are ties; summation order differs
# between variables, so exact equality would make tie-breaking arbitrary
TIE_RTOL = 1e-10


@njit(cache=True, nogil=True)
def _node_is_constant(y, col, rows, s, e, obs, use_obs):
    first = True
    lo = 0.0
    hi = 0.0
    for k in range(s, e):
        r = rows[k]
        if use_obs and not obs[r, col]:
            continue
        v = y[r, col]
        if first:
            lo = v
            hi = v
            first = False
        elif v < lo:
            lo = v
        elif v > hi:
            hi = v
    return lo == hi


@njit(cache=True, nogil=True)
def find_split(XT, y, obs, treat, weights, srt, s, e, perm, mtry, nodesize,
               mode):
    """Best (variable, threshold, score) for one node.

    ``srt[v, s:e]`` lists the node's rows sorted by variable ``v``.
    Variables are visited in random order; constant variables are skipped
    without counting against ``mtry``.  Returns variable -1 when no
    admissible split exists.
    """
    cnt = e - s
    na = perm.size
    rows = srt[perm[0]]
    W = 0.0
    for k in range(s, e):
        W += weights[rows[k]]
    if W < 2 * nodesize:
        return -1, 0.0, 0.0

    # node level statistics, per mode
    mean0 = 0.0
    mean1 = 0.0
    W0 = 0.0
    W1 = 0.0
    sse0 = 0.0
    sse1 = 0.0
    S0 = 0.0
    S1 = 0.0
    if mode == MODE_VARIANCE:
        if _node_is_constant(y, 0, rows, s, e, obs, False):
            return -1, 0.0, 0.0
        for k in range(s, e):
            r = rows[k]
            mean0 += weights[r] * y[r, 0]
        mean0 /= W
    elif mode == MODE_BIVARIATE:
        for k in range(s, e):
            r = rows[k]
            w = weights[r]
            if obs[r, 0]:
                W0 += w
                mean0 += w * y[r, 0]
            if obs[r, 1]:
                W1 += w
                mean1 += w * y[r, 1]
        if W0 > 0:
            mean0 /= W0
        if W1 > 0:
            mean1 /= W1
        for k in range(s, e):
            r = rows[k]
            w = weights[r]
            if obs[r, 0]:
                sse0 += w * (y[r, 0] - mean0) ** 2
            if obs[r, 1]:
                sse1 += w * (y[r, 1] - mean1) ** 2
        c0 = W0 == 0 or _node_is_constant(y, 0, rows, s, e, obs, True)
        c1 = W1 == 0 or _node_is_constant(y, 1, rows, s, e, obs, True)
        if c0 and c1:
            return -1, 0.0, 0.0
        if c0:
            sse0 = 0.0
        if c1:
            sse1 = 0.0
    else:
        if _node_is_constant(y, 0, rows, s, e, obs, False):
            return -1, 0.0, 0.0
        for k in range(s, e):
            r = rows[k]
            w = weights[r]
            if treat[r] == 1:
                W1 += w
                S1 += w * y[r, 0]
            else:
                W0 += w
                S0 += w * y[r, 0]
        if W0 == 0 or W1 == 0:
            return -1, 0.0, 0.0

    best_var = -1
    best_thr = 0.0
    best_score = -1.0
    tried = 0
    for j in range(na):
        pick = j + np.random.randint(0, na - j)
        tmp = perm[j]
        perm[j] = perm[pick]
        perm[pick] = tmp
        v = perm[j]
        xv = XT[v]
        order = srt[v]
        if xv[order[s]] == xv[order[e - 1]]:
            continue
        tried += 1

        var_score = -1.0
        var_thr = 0.0
        wl = 0.0
        sl0 = 0.0
        sl1 = 0.0
        wl0 = 0.0
        wl1 = 0.0
        for q in range(s, e - 1):
            r = order[q]
            w = weights[r]
            wl += w
            if mode == MODE_VARIANCE:
                sl0 += w * (y[r, 0] - mean0)
            elif mode == MODE_BIVARIATE:
                if obs[r, 0]:
                    wl0 += w
                    sl0 += w * (y[r, 0] - mean0)
                if obs[r, 1]:
                    wl1 += w
                    sl1 += w * (y[r, 1] - mean1)
            else:
                if treat[r] == 1:
                    wl1 += w
                    sl1 += w * y[r, 0]
                else:
                    wl0 += w
                    sl0 += w * y[r, 0]
            xa = xv[r]
            xb = xv[order[q + 1]]
            if xa == xb:
                continue
            wr = W - wl
            if wl < nodesize:
                continue
            if wr < nodesize:
                break
            if mode == MODE_VARIANCE:
                score = sl0 * sl0 * W / (wl * wr)
            elif mode == MODE_BIVARIATE:
                score = 0.0
                if sse0 > 0:
                    wr0 = W0 - wl0
                    if wl0 > 0 and wr0 > 0:
                        score += sl0 * sl0 * W0 / (wl0 * wr0 * sse0)
                if sse1 > 0:
                    wr1 = W1 - wl1
                    if wl1 > 0 and wr1 > 0:
                        score += sl1 * sl1 * W1 / (wl1 * wr1 * sse1)
            else:
                wr1 = W1 - wl1
                wr0 = W0 - wl0
                if wl1 <= 0 or wl0 <= 0 or wr1 <= 0 or wr0 <= 0:
                    continue
                tau_l = sl1 / wl1 - sl0 / wl0
                tau_r = (S1 - sl1) / wr1 - (S0 - sl0) / wr0
                score = wl * wr / W * (tau_l - tau_r) ** 2
            if score > var_score + TIE_RTOL * abs(var_score):
                var_score = score
                mid = 0.5 * (xa + xb)
                if mid >= xb:
                    mid = xa
                var_thr = mid
        gap = var_score - best_score
        tie = abs(gap) <= TIE_RTOL * abs(best_score)
        if var_score >= 0 and ((gap > 0 and not tie) or (tie and v < best_var)):
            best_score = var_score
            best_var = v
            best_thr = var_thr
        if tried >= mtry:
            break
    if mode == MODE_TREATMENT and best_score <= 0:
        return -1, 0.0, 0.0
    return best_var, best_thr, best_score


@njit(cache=True, nogil=True)
def inbag_sorted_rows(presorted, weights, m):
    """Per-variable sorted lists restricted to rows with positive weight."""
    p, n = presorted.shape
    srt = np.empty((p, m), np.int64)
    for v in range(p):
        k = 0
        for q in range(n):
            r = presorted[v, q]
            if weights[r] > 0:
                srt[v, k] = r
                k += 1
    return srt


@njit(cache=True, nogil=True)
def grow_tree(XT, presorted, y, obs, treat, weights, allowed, mtry, nodesize,
              mode, seed):
    """Grow one tree on the rows with positive ``weights``.

    ``presorted[v]`` is the argsort of ``XT[v]`` over all training rows.
    Returns (feature, threshold, left, right, value, count) trimmed to the
    number of nodes.  ``value`` is the weighted mean of ``y[:, 0]`` and
    ``count`` the weighted number of rows in each node.
    """
    np.random.seed(seed)
    p, n = XT.shape
    m = 0
    for i in range(n):
        if weights[i] > 0:
            m += 1
    srt = inbag_sorted_rows(presorted, weights, m)
    cap = 2 * m + 1
    feature = np.full(cap, -1, np.int32)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int32)
    right = np.full(cap, -1, np.int32)
    value = np.zeros(cap)
    count = np.zeros(cap)

    st_node = np.empty(cap, np.int64)
    st_s = np.empty(cap, np.int64)
    st_e = np.empty(cap, np.int64)
    st_node[0] = 0
    st_s[0] = 0
    st_e[0] = m
    top = 1
    n_nodes = 1
    perm = allowed.copy()
    buf = np.empty(max(m, 1), np.int64)
    goes_left = np.zeros(n, np.bool_)
    rows = srt[0]

    while top > 0:
        top -= 1
        node = st_node[top]
        s = st_s[top]
        e = st_e[top]
        W = 0.0
        S = 0.0
        for k in range(s, e):
            r = rows[k]
            W += weights[r]
            S += weights[r] * y[r, 0]
        count[node] = W
        value[node] = S / W if W > 0 else 0.0
        if e - s < 2:
            continue
        var, thr, score = find_split(XT, y, obs, treat, weights, srt, s, e,
                                     perm, mtry, nodesize, mode)
        if var < 0:
            continue
        nl = 0
        for k in range(s, e):
            r = rows[k]
            goes_left[r] = XT[var, r] <= thr
            if goes_left[r]:
                nl += 1
        for v in range(p):
            lst = srt[v]
            a = s
            b = 0
            for k in range(s, e):
                r = lst[k]
                if goes_left[r]:
                    lst[a] = r
                    a += 1
                else:
                    buf[b] = r
                    b += 1
            for k in range(b):
                lst[a + k] = buf[k]
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        feature[node] = var
        threshold[node] = thr
        left[node] = lc
        right[node] = rc
        st_node[top] = rc
        st_s[top] = s + nl
        st_e[top] = e
        top += 1
        st_node[top] = lc
        st_s[top] = s
        st_e[top] = s + nl
        top += 1

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(),
            value[:n_nodes].copy(), count[:n_nodes].copy())


@njit(cache=True, nogil=True)
def apply_forest(feature, threshold, left, right, offsets, X):
    """Global leaf index reached by each row in each tree, shape (T, n)."""
    T = offsets.size - 1
    n = X.shape[0]
    out = np.empty((T, n), np.int64)
    for t in range(T):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[t, i] = base + node
    return out


@njit(cache=True, nogil=True)
def predict_forest(feature, threshold, left, right, value, offsets, X, inbag,
                   oob_only):
    """Per-row sum of leaf values and number of trees used.

    With ``oob_only`` the rows of ``X`` are training rows and a tree
    contributes only when ``inbag[t, i] == 0``.
    """
    T = offsets.size - 1
    n = X.shape[0]
    sums = np.zeros(n)
    counts = np.zeros(n, np.int64)
    for t in range(T):
        base = offsets[t]
        for i in range(n):
            if oob_only and inbag[t, i] > 0:
                continue
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            sums[i] += value[base + node]
            counts[i] += 1
    return sums, counts


@njit(cache=True, nogil=True)
def terminal_node_impute(left, right, offsets, leaves, inbag, y, donor, target,
                         use_oob, ancestor=True):
    """Average of donor values in the terminal nodes of each target entry.

    leaves: (T, n) global leaf index of every training row.
    donor: (n, 2) bool, entries allowed to donate.
    target: (n, 2) bool, entries to impute.
    Only in-bag rows donate, weighted by multiplicity.  With ``use_oob`` a
    tree contributes to row i only when i is out-of-bag for it.  A leaf
    without donors for a column borrows the donor mean of its nearest
    ancestor that has some, or of the root when ``ancestor`` is False.
    Returns (sums, counts), both (n, 2).
    """
    T, n = leaves.shape
    sums = np.zeros((n, 2))
    counts = np.zeros((n, 2), np.int64)
    for t in range(T):
        base = offsets[t]
        size = offsets[t + 1] - base
        parent = np.zeros(size, np.int64)
        for k in range(size):
            if left[base + k] >= 0:
                parent[left[base + k]] = k
                parent[right[base + k]] = k
        node_sum = np.zeros((size, 2))
        node_w = np.zeros((size, 2))
        for i in range(n):
            w = inbag[t, i]
            if w == 0:
                continue
            leaf = leaves[t, i] - base
            for j in range(2):
                if donor[i, j]:
                    node_sum[leaf, j] += w * y[i, j]
                    node_w[leaf, j] += w
        # children always have larger indices than their parent
        for k in range(size - 1, 0, -1):
            for j in range(2):
                node_sum[parent[k], j] += node_sum[k, j]
                node_w[parent[k], j] += node_w[k, j]
        for i in range(n):
            if use_oob and inbag[t, i] > 0:
                continue
            for j in range(2):
                if not target[i, j]:
                    continue
                node = leaves[t, i] - base
                if not ancestor and node_w[node, j] == 0:
                    node = 0
                while node_w[node, j] == 0 and node != 0:
                    node = parent[node]
                if node_w[node, j] > 0:
                    sums[i, j] += node_sum[node, j] / node_w[node, j]
                    counts[i, j] += 1
    return sums, counts


@njit(cache=True, nogil=True)
def honest_node_effects(feature, threshold, left, right, offsets, X, treat, y,
                        est_mask):
    """Treatment-difference effect of every node from held-out rows.

    ``est_mask[t, i]`` marks the rows that repopulate tree t.  Each row is
    counted in every node on its root-to-leaf path.  A node whose held-out
    population lacks an arm inherits its parent's effect; NaN at the root.
    """
    T = offsets.size - 1
    n = X.shape[0]
    effect = np.full(offsets[T], np.nan)
    for t in range(T):
        base = offsets[t]
        size = offsets[t + 1] - base
        s1 = np.zeros(size)
        s0 = np.zeros(size)
        c1 = np.zeros(size)
        c0 = np.zeros(size)
        for i in range(n):
            if not est_mask[t, i]:
                continue
            node = 0
            while True:
                if treat[i] == 1:
                    s1[node] += y[i]
                    c1[node] += 1
                else:
                    s0[node] += y[i]
                    c0[node] += 1
                f = feature[base + node]
                if f < 0:
                    break
                if X[i, f] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
        parent = np.zeros(size, np.int64)
        for k in range(size):
            if left[base + k] >= 0:
                parent[left[base + k]] = k
                parent[right[base + k]] = k
        for k in range(size):
            if c1[k] > 0 and c0[k] > 0:
                effect[base + k] = s1[k] / c1[k] - s0[k] / c0[k]
            elif k > 0:
                effect[base + k] = effect[base + parent[k]]
    return effect
