"""Ensemble training, prediction and serialization.

Three variants on one engine:

* gbdt          -- Newton-step boosting on the logistic objective with
                   histogram split finding; growth policy "depth"
                   (depth-wise, XGBoost-like) or "leaf" (best-first with a
                   leaf cap, LightGBM-like).
* random_forest -- bootstrap rows, sqrt(d) features per split, Gini.
* extra_trees   -- no bootstrap, uniformly random thresholds, Gini.

Everything is deterministic given (X, y, variant, config, seed), bit for
bit, independent of thread count.
"""

import json
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import (
    BadMagicError,
    ChecksumError,
    ConfigError,
    DataError,
    DimensionMismatchError,
    TruncatedError,
    VersionError,
)
from . import kernels
from .binning import Binner, bin_matrix, fit_binner
from .config import VARIANTS, ForestConfig
from .grow import TreeBuilder, grow_tree_gbdt, grow_tree_gini, mix_seed

MODEL_MAGIC = b"MDL1"
MODEL_VERSION = 1


def logistic_grad_hess(y, score):
    """Gradient and hessian of the logistic loss at `score`.

    p = sigmoid(score); g = p - y; h = p (1 - p). Accepts scalars or arrays.
    """
    p = 1.0 / (1.0 + np.exp(-np.asarray(score, dtype=np.float64)))
    g = p - np.asarray(y, dtype=np.float64)
    h = p * (1.0 - p)
    return g, h


@dataclass
class TreeNode:
    feature_index: int
    threshold: float
    left: int
    right: int
    leaf_value: float
    split_gain: float

    @property
    def is_leaf(self) -> bool:
        return self.feature_index < 0


@dataclass
class Ensemble:
    variant: str
    config: ForestConfig
    seed: int
    feature_count: int
    base_score: float
    learning_rate: float
    feature: np.ndarray    # int32, -1 for leaves
    threshold: np.ndarray  # float64
    left: np.ndarray       # int32, global node ids
    right: np.ndarray
    value: np.ndarray      # float64 leaf values
    gain: np.ndarray       # float64 split gains
    tree_offsets: np.ndarray  # int64, len n_trees + 1

    @property
    def n_trees(self) -> int:
        return len(self.tree_offsets) - 1

    def tree_nodes(self, t: int) -> list[TreeNode]:
        lo, hi = self.tree_offsets[t], self.tree_offsets[t + 1]
        return [TreeNode(int(self.feature[i]), float(self.threshold[i]),
                         int(self.left[i]), int(self.right[i]),
                         float(self.value[i]), float(self.gain[i]))
                for i in range(lo, hi)]


def _pack_trees(builders: list[TreeBuilder]):
    offsets = [0]
    for b in builders:
        offsets.append(offsets[-1] + len(b.feature))
    feature = np.empty(offsets[-1], dtype=np.int32)
    threshold = np.empty(offsets[-1], dtype=np.float64)
    left = np.empty(offsets[-1], dtype=np.int32)
    right = np.empty(offsets[-1], dtype=np.int32)
    value = np.empty(offsets[-1], dtype=np.float64)
    gain = np.empty(offsets[-1], dtype=np.float64)
    for t, b in enumerate(builders):
        base = offsets[t]
        n = len(b.feature)
        feature[base:base + n] = b.feature
        threshold[base:base + n] = b.threshold
        value[base:base + n] = b.value
        gain[base:base + n] = b.gain
        for i in range(n):
            left[base + i] = b.left[i] + base if b.left[i] >= 0 else -1
            right[base + i] = b.right[i] + base if b.right[i] >= 0 else -1
    return feature, threshold, left, right, value, gain, np.array(offsets, dtype=np.int64)


def _check_xy(x, y):
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2:
        raise DataError("X must be 2-D")
    if len(y) != x.shape[0]:
        raise DataError(f"{len(y)} labels for {x.shape[0]} rows")
    classes = np.unique(y)
    if not np.array_equal(classes, [0, 1]):
        raise DataError(f"labels must contain both classes 0 and 1, got {classes.tolist()}")
    return x, y.astype(np.float64)


def train(x, y, variant: str, config: ForestConfig | None = None,
          seed: int = 0) -> Ensemble:
    """Train an ensemble; deterministic given all arguments."""
    if variant not in VARIANTS:
        raise ConfigError(f"variant must be one of {VARIANTS}, got {variant!r}")
    config = (config or ForestConfig()).validate()
    x, y = _check_xy(x, y)
    n, d = x.shape

    binner = fit_binner(x, config.max_bins)
    codes = bin_matrix(x, binner)
    ss = np.random.SeedSequence(seed)
    tree_rngs = [np.random.default_rng(child) for child in ss.spawn(max(config.trees, 1))]

    builders: list[TreeBuilder] = []
    if variant == "gbdt":
        prior = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
        base_score = math.log(prior / (1.0 - prior))
        scores = np.full(n, base_score, dtype=np.float64)
        n_sub_rows = max(1, int(round(config.row_subsample * n)))
        n_sub_feats = max(1, int(round(config.feature_subsample * d)))
        all_rows = np.arange(n, dtype=np.int32)
        for t in range(config.trees):
            rng = tree_rngs[t]
            g, h = logistic_grad_hess(y, scores)
            if n_sub_rows < n:
                mask = np.zeros(n, dtype=bool)
                sampled = rng.choice(n, size=n_sub_rows, replace=False)
                mask[sampled] = True
                order = all_rows[mask].copy()
                oob = all_rows[~mask]
            else:
                order = all_rows.copy()
                oob = all_rows[:0]
            if n_sub_feats < d:
                feats = np.sort(rng.choice(d, size=n_sub_feats, replace=False)).astype(np.int32)
            else:
                feats = np.arange(d, dtype=np.int32)
            builder = grow_tree_gbdt(codes, binner, order, g, h, feats, config)
            builders.append(builder)
            # in-sample rows: update from the leaf segments computed in place
            segs = builder.leaf_segments
            kernels.assign_leaf_updates(
                order,
                np.array([s[0] for s in segs], dtype=np.int64),
                np.array([s[1] for s in segs], dtype=np.int64),
                np.array([s[2] for s in segs], dtype=np.float64),
                config.learning_rate, scores)
            if oob.size:
                packed = _pack_trees([builder])
                kernels.predict_rows_add(x, oob, packed[0], packed[1], packed[2],
                                         packed[3], packed[4], packed[6],
                                         config.learning_rate, scores)
        learning_rate = config.learning_rate
    else:
        base_score = 0.0
        learning_rate = 1.0
        k = max(1, int(round(config.feature_subsample * math.sqrt(d))))
        for t in range(config.trees):
            rng = tree_rngs[t]
            tree_seed = mix_seed(seed, t)
            if variant == "random_forest":
                m = max(1, int(round(config.row_subsample * n)))
                counts = np.bincount(rng.integers(0, n, size=m), minlength=n)
                order = np.flatnonzero(counts).astype(np.int32)
                w = counts[order].astype(np.float64)
                weights = np.zeros(n, dtype=np.float64)
                weights[order] = w
            else:
                if config.row_subsample < 1.0:
                    m = max(1, int(round(config.row_subsample * n)))
                    order = np.sort(rng.choice(n, size=m, replace=False)).astype(np.int32)
                else:
                    order = np.arange(n, dtype=np.int32)
                weights = np.zeros(n, dtype=np.float64)
                weights[order] = 1.0
            wy = weights * y
            builders.append(grow_tree_gini(
                codes, binner, order, weights, wy, k, config, tree_seed,
                randomized=(variant == "extra_trees")))

    feature, threshold, left, right, value, gain, offsets = _pack_trees(builders)
    return Ensemble(variant=variant, config=config, seed=seed, feature_count=d,
                    base_score=base_score, learning_rate=learning_rate,
                    feature=feature, threshold=threshold, left=left, right=right,
                    value=value, gain=gain, tree_offsets=offsets)


def _check_input(ensemble: Ensemble, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    vector_in = x.ndim == 1
    if vector_in:
        x = x[None, :]
    if x.shape[1] != ensemble.feature_count:
        raise DimensionMismatchError(
            f"input has {x.shape[1]} features, model expects {ensemble.feature_count}")
    return np.ascontiguousarray(x), vector_in


def raw_scores(ensemble: Ensemble, x) -> np.ndarray:
    """gbdt margin scores (pre-sigmoid) or forest mean leaf fractions."""
    x, vector_in = _check_input(ensemble, x)
    total = np.empty(x.shape[0], dtype=np.float64)
    if ensemble.n_trees == 0:
        total[:] = 0.0
    else:
        kernels.predict_sum(x, ensemble.feature, ensemble.threshold,
                            ensemble.left, ensemble.right, ensemble.value,
                            ensemble.tree_offsets, total)
    if ensemble.variant == "gbdt":
        out = ensemble.base_score + ensemble.learning_rate * total
    else:
        out = total / ensemble.n_trees if ensemble.n_trees else np.full_like(total, 0.5)
    return out[0] if vector_in else out


def predict_proba(ensemble: Ensemble, x):
    """Positive-class probability in [0, 1] for each row (or a single vector)."""
    scores = raw_scores(ensemble, x)
    if ensemble.variant == "gbdt":
        return 1.0 / (1.0 + np.exp(-scores))
    return scores


def staged_scores(ensemble: Ensemble, x) -> np.ndarray:
    """Margin (gbdt) or running-mean (forest) score after each tree: (n, T)."""
    x, _ = _check_input(ensemble, x)
    contrib = np.empty((x.shape[0], ensemble.n_trees), dtype=np.float64)
    kernels.predict_contrib(x, ensemble.feature, ensemble.threshold,
                            ensemble.left, ensemble.right, ensemble.value,
                            ensemble.tree_offsets, contrib)
    cum = np.cumsum(contrib, axis=1)
    if ensemble.variant == "gbdt":
        return ensemble.base_score + ensemble.learning_rate * cum
    return cum / np.arange(1, ensemble.n_trees + 1)


def feature_gains(ensemble: Ensemble) -> np.ndarray:
    """Total split gain accumulated per feature; zero for unused features."""
    gains = np.zeros(ensemble.feature_count, dtype=np.float64)
    split_mask = ensemble.feature >= 0
    np.add.at(gains, ensemble.feature[split_mask], ensemble.gain[split_mask])
    return gains


def save(ensemble: Ensemble, path) -> None:
    header = json.dumps({
        "format": "ensemble",
        "version": MODEL_VERSION,
        "variant": ensemble.variant,
        "config": ensemble.config.to_dict(),
        "seed": ensemble.seed,
        "feature_count": ensemble.feature_count,
        "base_score": ensemble.base_score,
        "learning_rate": ensemble.learning_rate,
        "n_nodes": int(len(ensemble.feature)),
        "n_trees": ensemble.n_trees,
    }, sort_keys=True).encode("utf-8")
    parts = [MODEL_MAGIC, struct.pack("<I", len(header)), header,
             ensemble.feature.astype("<i4").tobytes(),
             ensemble.threshold.astype("<f8").tobytes(),
             ensemble.left.astype("<i4").tobytes(),
             ensemble.right.astype("<i4").tobytes(),
             ensemble.value.astype("<f8").tobytes(),
             ensemble.gain.astype("<f8").tobytes(),
             ensemble.tree_offsets.astype("<i8").tobytes()]
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    import os
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", crc))
    os.replace(tmp, path)


def load(path) -> Ensemble:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: expected magic {MODEL_MAGIC!r}")
    if len(blob) < 8:
        raise TruncatedError(f"{path}: truncated header")
    header_len = struct.unpack_from("<I", blob, 4)[0]
    if 8 + header_len > len(blob):
        raise TruncatedError(f"{path}: header needs {8 + header_len} bytes")
    meta = json.loads(blob[8:8 + header_len])
    if meta.get("version") != MODEL_VERSION:
        raise VersionError(f"{path}: model version {meta.get('version')}")
    n_nodes = meta["n_nodes"]
    n_trees = meta["n_trees"]
    off = 8 + header_len
    expected = off + n_nodes * (4 + 8 + 4 + 4 + 8 + 8) + (n_trees + 1) * 8 + 4
    if len(blob) != expected:
        raise TruncatedError(f"{path}: expected {expected} bytes, found {len(blob)}")
    stored_crc = struct.unpack_from("<I", blob, len(blob) - 4)[0]
    if stored_crc != (zlib.crc32(blob[:-4]) & 0xFFFFFFFF):
        raise ChecksumError(f"{path}: checksum mismatch")

    def read(dtype, count):
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).copy()
        off += arr.nbytes
        return arr

    feature = read("<i4", n_nodes)
    threshold = read("<f8", n_nodes)
    left = read("<i4", n_nodes)
    right = read("<i4", n_nodes)
    value = read("<f8", n_nodes)
    gain = read("<f8", n_nodes)
    tree_offsets = read("<i8", n_trees + 1)
    return Ensemble(variant=meta["variant"],
                    config=ForestConfig.from_dict(meta["config"]),
                    seed=meta["seed"], feature_count=meta["feature_count"],
                    base_score=meta["base_score"],
                    learning_rate=meta["learning_rate"],
                    feature=feature, threshold=threshold, left=left,
                    right=right, value=value, gain=gain,
                    tree_offsets=tree_offsets)
