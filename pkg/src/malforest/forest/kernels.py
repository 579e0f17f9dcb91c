"""Numba kernels for histogram tree growing and prediction.

Determinism contract: every kernel's output is a pure function of its
arguments regardless of thread count. Parallel loops are chunked over
features with per-chunk scratch buffers, per-feature results are written
to disjoint slots, and the final reductions run sequentially (ascending
feature order, strict improvement), which also pins the tie-break of
equal-gain splits to the lowest feature index and lowest bin.

Each split search exists in a serial and a parallel flavour with identical
arithmetic; the grower picks by segment size, since the parallel-region
launch overhead dwarfs the work at small nodes.
"""

import numpy as np
from numba import njit, prange

N_CHUNKS = 16
# segment_rows * candidate_features above which the parallel path pays off
PARALLEL_WORK_THRESHOLD = 1 << 16

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True, inline="always")
def splitmix64(state):
    z = (state + np.uint64(0x9E3779B97F4A7C15)) & MASK64
    out = z
    out = ((out ^ (out >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & MASK64
    out = ((out ^ (out >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & MASK64
    return out ^ (out >> np.uint64(31)), z


@njit(cache=True)
def sample_features(seed, k, d, out):
    """k distinct feature ids in [0, d), ascending, via rejection sampling."""
    state = np.uint64(seed)
    count = 0
    while count < k:
        value, state = splitmix64(state)
        f = np.int32(value % np.uint64(d))
        dup = False
        for i in range(count):
            if out[i] == f:
                dup = True
                break
        if dup:
            continue
        out[count] = f
        count += 1
    out[:k].sort()
    return k


# --- gradient/hessian histogram splits (gbdt) -------------------------------

@njit(cache=True, inline="always")
def _gbdt_feature(codes, rows, g, h, f, nb, hist, lam, mcw,
                  g_total, h_total, parent):
    for b in range(nb):
        hist[b, 0] = 0.0
        hist[b, 1] = 0.0
    for i in range(rows.size):
        r = rows[i]
        code = codes[r, f]
        hist[code, 0] += g[r]
        hist[code, 1] += h[r]
    gl = 0.0
    hl = 0.0
    best = -1.0
    best_bin = -1
    best_gl = 0.0
    best_hl = 0.0
    for b in range(nb - 1):
        gl += hist[b, 0]
        hl += hist[b, 1]
        hr = h_total - hl
        if hr < mcw:
            break
        if hl < mcw:
            continue
        gr = g_total - gl
        gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
        if gain > best:
            best = gain
            best_bin = b
            best_gl = gl
            best_hl = hl
    return best, best_bin, best_gl, best_hl


@njit(cache=True)
def _reduce_best(res_gain, res_bin):
    best = -1.0
    best_fi = -1
    for fi in range(res_gain.size):
        if res_bin[fi] >= 0 and res_gain[fi] > best:
            best = res_gain[fi]
            best_fi = fi
    return best, best_fi


@njit(parallel=True, cache=True)
def _best_split_gbdt_par(codes, rows, g, h, feats, n_bins, lam, mcw,
                         g_total, h_total):
    nf = feats.size
    res_gain = np.full(nf, -1.0)
    res_bin = np.full(nf, -1, dtype=np.int32)
    res_gl = np.zeros(nf)
    res_hl = np.zeros(nf)
    parent = g_total * g_total / (h_total + lam)
    for c in prange(N_CHUNKS):
        hist = np.empty((256, 2), dtype=np.float64)
        for fi in range(c, nf, N_CHUNKS):
            f = feats[fi]
            nb = n_bins[f]
            if nb < 2:
                continue
            gain, best_bin, gl, hl = _gbdt_feature(
                codes, rows, g, h, f, nb, hist, lam, mcw,
                g_total, h_total, parent)
            res_gain[fi] = gain
            res_bin[fi] = best_bin
            res_gl[fi] = gl
            res_hl[fi] = hl
    best, best_fi = _reduce_best(res_gain, res_bin)
    if best_fi < 0:
        return -1.0, -1, -1, 0.0, 0.0
    return best, best_fi, res_bin[best_fi], res_gl[best_fi], res_hl[best_fi]


@njit(cache=True)
def _best_split_gbdt_ser(codes, rows, g, h, feats, n_bins, lam, mcw,
                         g_total, h_total):
    parent = g_total * g_total / (h_total + lam)
    hist = np.empty((256, 2), dtype=np.float64)
    best = -1.0
    best_fi = -1
    best_bin = -1
    best_gl = 0.0
    best_hl = 0.0
    for fi in range(feats.size):
        f = feats[fi]
        nb = n_bins[f]
        if nb < 2:
            continue
        gain, sbin, gl, hl = _gbdt_feature(
            codes, rows, g, h, f, nb, hist, lam, mcw,
            g_total, h_total, parent)
        if sbin >= 0 and gain > best:
            best = gain
            best_fi = fi
            best_bin = sbin
            best_gl = gl
            best_hl = hl
    if best_fi < 0:
        return -1.0, -1, -1, 0.0, 0.0
    return best, best_fi, best_bin, best_gl, best_hl


def best_split_gbdt(codes, rows, g, h, feats, n_bins, lam, mcw,
                    g_total, h_total):
    """Best second-order gain split; (gain, feat_slot, bin, g_left, h_left)."""
    if rows.size * feats.size >= PARALLEL_WORK_THRESHOLD:
        return _best_split_gbdt_par(codes, rows, g, h, feats, n_bins, lam, mcw,
                                    g_total, h_total)
    return _best_split_gbdt_ser(codes, rows, g, h, feats, n_bins, lam, mcw,
                                g_total, h_total)


# --- Gini histogram splits (forests) ----------------------------------------

@njit(cache=True, inline="always")
def _gini_gain(wl0, wl1, wr0, wr1):
    wl = wl0 + wl1
    wr = wr0 + wr1
    wp = wl + wr
    p0 = wl0 + wr0
    p1 = wl1 + wr1
    g_parent = wp - (p0 * p0 + p1 * p1) / wp
    g_left = wl - (wl0 * wl0 + wl1 * wl1) / wl
    g_right = wr - (wr0 * wr0 + wr1 * wr1) / wr
    return g_parent - g_left - g_right


@njit(cache=True, inline="always")
def _gini_feature(codes, rows, w, wy, f, nb, hist, min_leaf_w,
                  w0_total, w1_total):
    for b in range(nb):
        hist[b, 0] = 0.0
        hist[b, 1] = 0.0
    for i in range(rows.size):
        r = rows[i]
        code = codes[r, f]
        hist[code, 0] += w[r] - wy[r]
        hist[code, 1] += wy[r]
    wl0 = 0.0
    wl1 = 0.0
    best = -1.0
    best_bin = -1
    best_wl0 = 0.0
    best_wl1 = 0.0
    for b in range(nb - 1):
        wl0 += hist[b, 0]
        wl1 += hist[b, 1]
        wr0 = w0_total - wl0
        wr1 = w1_total - wl1
        if wr0 + wr1 < min_leaf_w:
            break
        if wl0 + wl1 < min_leaf_w:
            continue
        gain = _gini_gain(wl0, wl1, wr0, wr1)
        if gain > best:
            best = gain
            best_bin = b
            best_wl0 = wl0
            best_wl1 = wl1
    return best, best_bin, best_wl0, best_wl1


@njit(cache=True)
def _best_split_gini_ser(codes, rows, w, wy, feats, n_bins, min_leaf_w,
                         w0_total, w1_total):
    hist = np.empty((256, 2), dtype=np.float64)
    best = -1.0
    best_fi = -1
    best_bin = -1
    best_wl0 = 0.0
    best_wl1 = 0.0
    for fi in range(feats.size):
        f = feats[fi]
        nb = n_bins[f]
        if nb < 2:
            continue
        gain, sbin, wl0, wl1 = _gini_feature(
            codes, rows, w, wy, f, nb, hist, min_leaf_w,
            w0_total, w1_total)
        if sbin >= 0 and gain > best:
            best = gain
            best_fi = fi
            best_bin = sbin
            best_wl0 = wl0
            best_wl1 = wl1
    if best_fi < 0:
        return -1.0, -1, -1, 0.0, 0.0
    return best, best_fi, best_bin, best_wl0, best_wl1


@njit(parallel=True, cache=True)
def _best_split_gini_par(codes, rows, w, wy, feats, n_bins, min_leaf_w,
                         w0_total, w1_total):
    nf = feats.size
    res_gain = np.full(nf, -1.0)
    res_bin = np.full(nf, -1, dtype=np.int32)
    res_wl0 = np.zeros(nf)
    res_wl1 = np.zeros(nf)
    for c in prange(N_CHUNKS):
        hist = np.empty((256, 2), dtype=np.float64)
        for fi in range(c, nf, N_CHUNKS):
            f = feats[fi]
            nb = n_bins[f]
            if nb < 2:
                continue
            gain, sbin, wl0, wl1 = _gini_feature(
                codes, rows, w, wy, f, nb, hist, min_leaf_w,
                w0_total, w1_total)
            res_gain[fi] = gain
            res_bin[fi] = sbin
            res_wl0[fi] = wl0
            res_wl1[fi] = wl1
    best, best_fi = _reduce_best(res_gain, res_bin)
    if best_fi < 0:
        return -1.0, -1, -1, 0.0, 0.0
    return best, best_fi, res_bin[best_fi], res_wl0[best_fi], res_wl1[best_fi]


def best_split_gini(codes, rows, w, wy, feats, n_bins, min_leaf_w,
                    w0_total, w1_total):
    """Best Gini-decrease split; (gain, feat_slot, bin, w0_left, w1_left)."""
    if rows.size * feats.size >= PARALLEL_WORK_THRESHOLD:
        return _best_split_gini_par(codes, rows, w, wy, feats, n_bins,
                                    min_leaf_w, w0_total, w1_total)
    return _best_split_gini_ser(codes, rows, w, wy, feats, n_bins,
                                min_leaf_w, w0_total, w1_total)


@njit(cache=True)
def random_split_gini(codes, rows, w, wy, feats, n_bins, min_leaf_w,
                      w0_total, w1_total, node_seed):
    """Extremely-randomized split: one uniformly random threshold per
    candidate feature (over its occupied bin range), best Gini wins.
    Returns (gain, feat_slot, bin, w0_left, w1_left)."""
    hist = np.empty((256, 2), dtype=np.float64)
    best = -1.0
    best_fi = -1
    best_bin = -1
    best_wl0 = 0.0
    best_wl1 = 0.0
    for fi in range(feats.size):
        f = feats[fi]
        nb = n_bins[f]
        if nb < 2:
            continue
        for b in range(nb):
            hist[b, 0] = 0.0
            hist[b, 1] = 0.0
        min_bin = 256
        max_bin = -1
        for i in range(rows.size):
            r = rows[i]
            code = codes[r, f]
            hist[code, 0] += w[r] - wy[r]
            hist[code, 1] += wy[r]
            if code < min_bin:
                min_bin = code
            if code > max_bin:
                max_bin = code
        if max_bin <= min_bin:
            continue
        # threshold seeded by (node, global feature id): independent of the
        # sampled candidate set and of evaluation order
        value, _ = splitmix64(np.uint64(node_seed) ^
                              (np.uint64(f + 1) * np.uint64(0x9E3779B97F4A7C15)))
        t = min_bin + np.int32(value % np.uint64(max_bin - min_bin))
        wl0 = 0.0
        wl1 = 0.0
        for b in range(min_bin, t + 1):
            wl0 += hist[b, 0]
            wl1 += hist[b, 1]
        wr0 = w0_total - wl0
        wr1 = w1_total - wl1
        if wl0 + wl1 < min_leaf_w or wr0 + wr1 < min_leaf_w:
            continue
        gain = _gini_gain(wl0, wl1, wr0, wr1)
        if gain > best:
            best = gain
            best_fi = fi
            best_bin = t
            best_wl0 = wl0
            best_wl1 = wl1
    if best_fi < 0:
        return -1.0, -1, -1, 0.0, 0.0
    return best, best_fi, best_bin, best_wl0, best_wl1


# --- partitioning and prediction --------------------------------------------

@njit(cache=True)
def partition_rows(codes, rows, feature, split_bin, scratch):
    """Stable partition of `rows` by code <= split_bin; returns n_left.

    Row order inside each side is preserved, so repeated runs produce
    identical segments.
    """
    n = rows.size
    n_left = 0
    for i in range(n):
        if codes[rows[i], feature] <= split_bin:
            n_left += 1
    lo = 0
    hi = n_left
    for i in range(n):
        r = rows[i]
        if codes[r, feature] <= split_bin:
            scratch[lo] = r
            lo += 1
        else:
            scratch[hi] = r
            hi += 1
    rows[:] = scratch[:n]
    return n_left


@njit(cache=True)
def sum_pair(values, rows):
    total = 0.0
    for i in range(rows.size):
        total += values[rows[i]]
    return total


@njit(parallel=True, cache=True)
def predict_sum(x, feature, threshold, left, right, value, tree_off, out):
    """Sum of reached-leaf values across trees, per row of x."""
    n = x.shape[0]
    n_trees = tree_off.size - 1
    for i in prange(n):
        acc = 0.0
        for t in range(n_trees):
            node = tree_off[t]
            while feature[node] >= 0:
                if x[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[i] = acc


@njit(parallel=True, cache=True)
def predict_contrib(x, feature, threshold, left, right, value, tree_off, out):
    """Per-tree leaf values: out has shape (n_rows, n_trees)."""
    n = x.shape[0]
    n_trees = tree_off.size - 1
    for i in prange(n):
        for t in range(n_trees):
            node = tree_off[t]
            while feature[node] >= 0:
                if x[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, t] = value[node]


@njit(cache=True)
def assign_leaf_updates(order, seg_starts, seg_ends, leaf_values, lr, scores):
    """Add lr * leaf_value to scores for each finished leaf segment."""
    for s in range(seg_starts.size):
        v = lr * leaf_values[s]
        for i in range(seg_starts[s], seg_ends[s]):
            scores[order[i]] += v


@njit(cache=True)
def predict_rows_add(x, rows, feature, threshold, left, right, value,
                     tree_off, scale, scores):
    """scores[rows] += scale * (sum of leaf values); used for rows outside
    the per-tree subsample."""
    n_trees = tree_off.size - 1
    for ri in range(rows.size):
        i = rows[ri]
        acc = 0.0
        for t in range(n_trees):
            node = tree_off[t]
            while feature[node] >= 0:
                if x[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        scores[i] += scale * acc
