"""Single-tree growers operating on the binned code matrix.

All growers share the flat node representation: parallel lists of
(feature, threshold, left, right, value, gain) indexed by node id, with
feature == -1 marking leaves. Growth order is deterministic: depth-wise
trees expand FIFO, leaf-wise trees expand by best gain with an insertion
counter as tie-break.
"""

import heapq

import numpy as np

from . import kernels
from .binning import Binner
from .config import ForestConfig

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


def mix_seed(a: int, b: int) -> int:
    """Stable 64-bit mix of two integers."""
    z = (a * _GOLDEN + b * 0x94D049BB133111EB + 0xBF58476D1CE4E5B9) & _MASK
    z ^= z >> 30
    z = (z * 0xD6E8FEB86659FD93) & _MASK
    z ^= z >> 27
    return z


class TreeBuilder:
    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []
        self.gain: list[float] = []
        self.leaf_segments: list[tuple[int, int, float]] = []  # (lo, hi, value)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def set_split(self, node, feature, threshold, gain, left, right):
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.gain[node] = float(gain)
        self.left[node] = left
        self.right[node] = right

    def set_leaf(self, node, value, lo=-1, hi=-1):
        self.value[node] = float(value)
        if lo >= 0:
            self.leaf_segments.append((lo, hi, float(value)))


def grow_tree_gbdt(codes, binner: Binner, order, g, h, feats,
                   config: ForestConfig) -> TreeBuilder:
    """One regression tree on (g, h); `order` is mutated in place."""
    lam = config.reg_lambda
    mcw = config.min_child_weight
    min_gain = config.min_split_gain
    scratch = np.empty_like(order)
    builder = TreeBuilder()

    def leaf_value(g_sum, h_sum):
        return -g_sum / (h_sum + lam)

    root = builder.add_node()
    g_root = kernels.sum_pair(g, order)
    h_root = kernels.sum_pair(h, order)

    if config.growth == "depth":
        queue = [(root, 0, order.size, g_root, h_root, 0)]
        head = 0
        while head < len(queue):
            node, lo, hi, g_sum, h_sum, depth = queue[head]
            head += 1
            seg = order[lo:hi]
            if depth >= config.depth_cap or seg.size < 2:
                builder.set_leaf(node, leaf_value(g_sum, h_sum), lo, hi)
                continue
            gain, fi, split_bin, gl, hl = kernels.best_split_gbdt(
                codes, seg, g, h, feats, binner.n_bins, lam, mcw, g_sum, h_sum)
            if fi < 0 or gain <= min_gain:
                builder.set_leaf(node, leaf_value(g_sum, h_sum), lo, hi)
                continue
            feature = int(feats[fi])
            n_left = kernels.partition_rows(codes, seg, feature, split_bin,
                                            scratch[:seg.size])
            left = builder.add_node()
            right = builder.add_node()
            builder.set_split(node, feature, binner.threshold(feature, split_bin),
                              gain, left, right)
            queue.append((left, lo, lo + n_left, gl, hl, depth + 1))
            queue.append((right, lo + n_left, hi, g_sum - gl, h_sum - hl, depth + 1))
    else:  # leaf-wise, best-first, capped by max leaves
        max_leaves = config.leaves if config.leaves > 0 else (1 << 30)
        counter = 0
        heap = []

        def push(node, lo, hi, g_sum, h_sum, depth):
            nonlocal counter
            seg = order[lo:hi]
            if depth >= config.depth_cap or seg.size < 2:
                builder.set_leaf(node, leaf_value(g_sum, h_sum), lo, hi)
                return
            gain, fi, split_bin, gl, hl = kernels.best_split_gbdt(
                codes, seg, g, h, feats, binner.n_bins, lam, mcw, g_sum, h_sum)
            if fi < 0 or gain <= min_gain:
                builder.set_leaf(node, leaf_value(g_sum, h_sum), lo, hi)
                return
            heapq.heappush(heap, (-gain, counter,
                                  (node, lo, hi, g_sum, h_sum, depth,
                                   int(feats[fi]), split_bin, gl, hl)))
            counter += 1

        n_leaves = 1
        push(root, 0, order.size, g_root, h_root, 0)
        while heap and n_leaves < max_leaves:
            neg_gain, _, (node, lo, hi, g_sum, h_sum, depth,
                          feature, split_bin, gl, hl) = heapq.heappop(heap)
            seg = order[lo:hi]
            n_left = kernels.partition_rows(codes, seg, feature, split_bin,
                                            scratch[:seg.size])
            left = builder.add_node()
            right = builder.add_node()
            builder.set_split(node, feature, binner.threshold(feature, split_bin),
                              -neg_gain, left, right)
            n_leaves += 1
            push(left, lo, lo + n_left, gl, hl, depth + 1)
            push(right, lo + n_left, hi, g_sum - gl, h_sum - hl, depth + 1)
        # drain: whatever is still queued becomes leaves
        while heap:
            _, _, (node, lo, hi, g_sum, h_sum, depth, *_rest) = heapq.heappop(heap)
            builder.set_leaf(node, leaf_value(g_sum, h_sum), lo, hi)
    return builder


def grow_tree_gini(codes, binner: Binner, order, w, wy, k_features,
                   config: ForestConfig, tree_seed: int,
                   randomized: bool) -> TreeBuilder:
    """One classification tree with Gini splits on `k_features` sampled
    per node; `randomized` switches greedy thresholds for uniform ones."""
    min_leaf_w = 1.0
    scratch = np.empty_like(order)
    feat_buf = np.empty(k_features, dtype=np.int32)
    d = codes.shape[1]
    builder = TreeBuilder()

    root = builder.add_node()
    w_root = kernels.sum_pair(w, order)
    wy_root = kernels.sum_pair(wy, order)
    queue = [(root, 0, order.size, w_root, wy_root, 0)]
    head = 0
    node_counter = 0
    while head < len(queue):
        node, lo, hi, w_sum, wy_sum, depth = queue[head]
        head += 1
        node_seed = mix_seed(tree_seed, node_counter)
        node_counter += 1
        seg = order[lo:hi]
        pos_frac = wy_sum / w_sum
        pure = wy_sum == 0.0 or wy_sum == w_sum
        if depth >= config.depth_cap or seg.size < 2 or pure:
            builder.set_leaf(node, pos_frac)
            continue
        kernels.sample_features(np.uint64(node_seed), k_features, d, feat_buf)
        if randomized:
            gain, fi, split_bin, wl0, wl1 = kernels.random_split_gini(
                codes, seg, w, wy, feat_buf, binner.n_bins, min_leaf_w,
                w_sum - wy_sum, wy_sum, np.uint64(node_seed))
        else:
            gain, fi, split_bin, wl0, wl1 = kernels.best_split_gini(
                codes, seg, w, wy, feat_buf, binner.n_bins, min_leaf_w,
                w_sum - wy_sum, wy_sum)
        if fi < 0 or gain <= config.min_split_gain:
            builder.set_leaf(node, pos_frac)
            continue
        feature = int(feat_buf[fi])
        n_left = kernels.partition_rows(codes, seg, feature, split_bin,
                                        scratch[:seg.size])
        left = builder.add_node()
        right = builder.add_node()
        builder.set_split(node, feature, binner.threshold(feature, split_bin),
                          gain, left, right)
        queue.append((left, lo, lo + n_left, wl0 + wl1, wl1, depth + 1))
        queue.append((right, lo + n_left, hi, w_sum - wl0 - wl1,
                      wy_sum - wl1, depth + 1))
    return builder
