"""Dimensionality reduction: PCA projection or supervised gain-based
feature selection, fit on the scaled training matrix only.

The selector trains a gradient-boosted ensemble with a pinned default
configuration, accumulates total split gain per feature and keeps the
top k, so reductions are reproducible artifacts with a recorded
provenance chain (training-set fingerprint plus the scaler fingerprint
they were fit behind).
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import forest
from .errors import (
    BadMagicError,
    ChecksumError,
    DataError,
    DimensionMismatchError,
    TruncatedError,
    VersionError,
)
from .forest import SELECTOR_CONFIG, SELECTOR_SEED, ForestConfig

STANDARD_DIMS = (128, 256, 384)
REDUCER_MAGIC = b"RDR1"
REDUCER_VERSION = 1
XGBFS_MIN_ROWS = 50


@dataclass
class PcaProjection:
    mean: np.ndarray                # (d,) f64
    components: np.ndarray          # (k, d) f64, row-orthonormal
    explained_variance: np.ndarray  # (k,) f64, non-increasing
    train_fingerprint: str = ""
    scaler_ref: str = ""

    @property
    def k(self) -> int:
        return self.components.shape[0]

    @property
    def n_dims(self) -> int:
        return self.components.shape[1]

    @property
    def method(self) -> str:
        return "pca"


@dataclass
class FeatureMask:
    indices: np.ndarray  # (k,) strictly increasing int32
    gains: np.ndarray    # (k,) selection-time gain per kept index
    n_dims: int
    train_fingerprint: str = ""
    scaler_ref: str = ""

    @property
    def k(self) -> int:
        return len(self.indices)

    @property
    def method(self) -> str:
        return "xgbfs"


def fit_pca(x: np.ndarray, k: int, train_fingerprint: str = "",
            scaler_ref: str = "") -> PcaProjection:
    """Top-k eigenpairs of the covariance of x, deterministic sign.

    Sign convention: each component's largest-magnitude coordinate is
    positive. Eigenvalues below rank come out as (clipped) zeros with an
    arbitrary orthonormal completion.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if k > n:
        raise DataError(f"PCA needs at least k={k} rows, got {n}")
    if k > d:
        raise DataError(f"k={k} exceeds input dimensionality {d}")
    if not np.isfinite(x).all():
        raise DataError("PCA input must be finite")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    values = np.clip(eigvals[order], 0.0, None)
    components = eigvecs[:, order].T.copy()
    for i in range(k):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    return PcaProjection(mean=mean, components=components,
                         explained_variance=values,
                         train_fingerprint=train_fingerprint,
                         scaler_ref=scaler_ref)


def project(p: PcaProjection, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    vector_in = x.ndim == 1
    if vector_in:
        x = x[None, :]
    if x.shape[1] != p.n_dims:
        raise DimensionMismatchError(
            f"input has {x.shape[1]} dims, projection expects {p.n_dims}")
    out = (x - p.mean) @ p.components.T
    return out[0] if vector_in else out


def selector_gains(x: np.ndarray, y: np.ndarray,
                   gbdt_config: ForestConfig | None = None,
                   seed: int = SELECTOR_SEED) -> np.ndarray:
    """Per-feature total split gain of the selector ensemble."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < XGBFS_MIN_ROWS:
        raise DataError(f"selector needs at least {XGBFS_MIN_ROWS} rows, "
                        f"got {x.shape[0]}")
    ensemble = forest.train(x, y, "gbdt", gbdt_config or SELECTOR_CONFIG, seed=seed)
    return forest.feature_gains(ensemble)


def mask_from_gains(gains: np.ndarray, k: int, n_dims: int,
                    train_fingerprint: str = "", scaler_ref: str = "") -> FeatureMask:
    """Top-k features by gain; ties resolve to the lower feature index."""
    if k > n_dims:
        raise DataError(f"k={k} exceeds input dimensionality {n_dims}")
    order = np.lexsort((np.arange(n_dims), -gains))
    chosen = np.sort(order[:k]).astype(np.int32)
    return FeatureMask(indices=chosen, gains=gains[chosen].astype(np.float64),
                       n_dims=n_dims, train_fingerprint=train_fingerprint,
                       scaler_ref=scaler_ref)


def fit_xgbfs(x: np.ndarray, y: np.ndarray, k: int,
              gbdt_config: ForestConfig | None = None,
              seed: int = SELECTOR_SEED, train_fingerprint: str = "",
              scaler_ref: str = "") -> FeatureMask:
    """Supervised selection: train the selector, keep the top-k gain features."""
    gains = selector_gains(x, y, gbdt_config, seed)
    return mask_from_gains(gains, k, x.shape[1], train_fingerprint, scaler_ref)


def select(mask: FeatureMask, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    vector_in = x.ndim == 1
    if vector_in:
        x = x[None, :]
    if x.shape[1] != mask.n_dims:
        raise DimensionMismatchError(
            f"input has {x.shape[1]} dims, mask expects {mask.n_dims}")
    out = x[:, mask.indices]
    return out[0] if vector_in else out


def apply_reducer(reducer, x: np.ndarray) -> np.ndarray:
    if isinstance(reducer, PcaProjection):
        return project(reducer, x)
    return select(reducer, x)


# --- serialization -----------------------------------------------------------

def reducer_bytes(reducer) -> bytes:
    """Canonical serialized form: mask JSON, or PCA binary header + f64
    matrices + crc32."""
    if isinstance(reducer, FeatureMask):
        return json.dumps({
            "format": "reducer",
            "version": REDUCER_VERSION,
            "method": "xgbfs",
            "k": reducer.k,
            "n_dims": reducer.n_dims,
            "indices": reducer.indices.tolist(),
            "gains": reducer.gains.tolist(),
            "train_fingerprint": reducer.train_fingerprint,
            "scaler_ref": reducer.scaler_ref,
        }, sort_keys=True).encode("utf-8")
    header = json.dumps({
        "format": "reducer",
        "version": REDUCER_VERSION,
        "method": "pca",
        "k": reducer.k,
        "n_dims": reducer.n_dims,
        "explained_variance": reducer.explained_variance.tolist(),
        "train_fingerprint": reducer.train_fingerprint,
        "scaler_ref": reducer.scaler_ref,
    }, sort_keys=True).encode("utf-8")
    payload = b"".join([
        REDUCER_MAGIC,
        struct.pack("<I", len(header)),
        header,
        reducer.mean.astype("<f8").tobytes(),
        reducer.components.astype("<f8").tobytes(),
    ])
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def reducer_fingerprint(reducer) -> str:
    import hashlib
    return hashlib.sha256(reducer_bytes(reducer)).hexdigest()


def save_reducer(reducer, path) -> None:
    import os
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(reducer_bytes(reducer))
    os.replace(tmp, path)


def load_reducer(path):
    with open(path, "rb") as fh:
        head = fh.read(4)
        rest = fh.read()
    blob = head + rest
    if head == REDUCER_MAGIC:
        if len(blob) < 8:
            raise TruncatedError(f"{path}: truncated header")
        header_len = struct.unpack_from("<I", blob, 4)[0]
        meta = json.loads(blob[8:8 + header_len])
        if meta.get("version") != REDUCER_VERSION:
            raise VersionError(f"{path}: reducer version {meta.get('version')}")
        k, d = meta["k"], meta["n_dims"]
        off = 8 + header_len
        expected = off + 8 * d + 8 * k * d + 4
        if len(blob) != expected:
            raise TruncatedError(f"{path}: expected {expected} bytes, found {len(blob)}")
        if struct.unpack_from("<I", blob, len(blob) - 4)[0] != (zlib.crc32(blob[:-4]) & 0xFFFFFFFF):
            raise ChecksumError(f"{path}: checksum mismatch")
        mean = np.frombuffer(blob, dtype="<f8", count=d, offset=off).copy()
        components = np.frombuffer(blob, dtype="<f8", count=k * d,
                                   offset=off + 8 * d).reshape(k, d).copy()
        return PcaProjection(mean=mean, components=components,
                             explained_variance=np.asarray(meta["explained_variance"]),
                             train_fingerprint=meta["train_fingerprint"],
                             scaler_ref=meta["scaler_ref"])
    try:
        obj = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadMagicError(f"{path}: neither a PCA blob nor a mask JSON") from exc
    if obj.get("format") != "reducer" or obj.get("method") != "xgbfs":
        raise BadMagicError(f"{path}: not a reducer artifact")
    if obj.get("version") != REDUCER_VERSION:
        raise VersionError(f"{path}: reducer version {obj.get('version')}")
    return FeatureMask(indices=np.asarray(obj["indices"], dtype=np.int32),
                       gains=np.asarray(obj["gains"], dtype=np.float64),
                       n_dims=obj["n_dims"],
                       train_fingerprint=obj["train_fingerprint"],
                       scaler_ref=obj["scaler_ref"])
