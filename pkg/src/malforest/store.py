"""Labeled feature datasets: canonical binary container, JSONL ingestion,
unification with deduplication, and deterministic train/val/test splitting.

The canonical on-disk format "FVS1" is a flat little-endian layout:

    magic "FVS1" | u32 version | u64 n_rows | u32 n_dims
    | labels  int8[n_rows]
    | sha256  32 bytes x n_rows
    | tag table: u32 n_tags, (u16 len + utf8) x n_tags, u16 tag_idx[n_rows]
    | features float32[n_rows x n_dims] row-major
    | crc32 of everything above

Row-major float32 at a fixed offset keeps the matrix memory-mappable;
no external container library is required. JSONL records written by the
extractor ({"sha256": hex, "label": -1|0|1, "features": [...]}) are the
supported interchange format for foreign datasets.
"""

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    DataError,
    TruncatedError,
    VersionError,
)

MAGIC = b"FVS1"
VERSION = 1

TRAIN_A = "train_A"
TRAIN_B = "train_B"
VALIDATION = "validation"
TEST = "test"
PARTITIONS = (TRAIN_A, TRAIN_B, VALIDATION, TEST)


@dataclass
class DatasetStore:
    """Immutable row-major feature matrix with labels, identities, provenance."""

    features: np.ndarray          # (n_rows, n_dims) float32
    labels: np.ndarray            # (n_rows,) int8, values in {-1, 0, 1}
    sha256: list[bytes]           # 32-byte digests
    source_tags: list[str]

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        n = self.features.shape[0]
        if not (len(self.labels) == len(self.sha256) == len(self.source_tags) == n):
            raise DataError(
                f"row count mismatch: features {n}, labels {len(self.labels)}, "
                f"sha256 {len(self.sha256)}, tags {len(self.source_tags)}")
        bad = set(np.unique(self.labels)) - {-1, 0, 1}
        if bad:
            raise DataError(f"labels outside {{-1,0,1}}: {sorted(bad)}")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_dims(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "DatasetStore":
        idx = np.asarray(indices, dtype=np.int64)
        return DatasetStore(
            features=self.features[idx],
            labels=self.labels[idx],
            sha256=[self.sha256[i] for i in idx],
            source_tags=[self.source_tags[i] for i in idx],
        )

    def drop_unlabeled(self) -> "DatasetStore":
        return self.take(np.flatnonzero(self.labels >= 0))

    def fingerprint(self) -> str:
        """Hash of the sorted row-identity set; names what data was used."""
        h = hashlib.sha256()
        for digest in sorted(self.sha256):
            h.update(digest)
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, DatasetStore):
            return NotImplemented
        return (self.features.tobytes() == other.features.tobytes()
                and self.labels.tobytes() == other.labels.tobytes()
                and self.sha256 == other.sha256
                and self.source_tags == other.source_tags)


@dataclass
class UnifyReport:
    n_input_rows: int
    n_unlabeled_dropped: int
    n_duplicates_dropped: int
    n_label_conflicts: int
    conflict_sha256: list[str] = field(default_factory=list)


def unify(stores: list[DatasetStore]) -> tuple[DatasetStore, UnifyReport]:
    """Concatenate stores, drop unlabeled rows, deduplicate by SHA-256.

    First occurrence wins; label disagreements between occurrences are
    counted and reported, never merged.
    """
    if not stores:
        raise DataError("unify requires at least one store")
    dims = {s.n_dims for s in stores}
    if len(dims) > 1:
        raise DataError(f"dimension mismatch across stores: {sorted(dims)}")

    n_input = sum(s.n_rows for s in stores)
    n_unlabeled = 0
    seen: dict[bytes, int] = {}
    conflicts: set[bytes] = set()
    keep: list[tuple[int, int]] = []  # (store index, row index)
    for si, store in enumerate(stores):
        for ri in range(store.n_rows):
            label = int(store.labels[ri])
            if label < 0:
                n_unlabeled += 1
                continue
            digest = store.sha256[ri]
            if digest in seen:
                if seen[digest] != label:
                    conflicts.add(digest)
                continue
            seen[digest] = label
            keep.append((si, ri))

    features = np.vstack([stores[si].features[ri:ri + 1] for si, ri in keep]) \
        if keep else np.zeros((0, stores[0].n_dims), dtype=np.float32)
    unified = DatasetStore(
        features=features,
        labels=np.array([stores[si].labels[ri] for si, ri in keep], dtype=np.int8),
        sha256=[stores[si].sha256[ri] for si, ri in keep],
        source_tags=[stores[si].source_tags[ri] for si, ri in keep],
    )
    report = UnifyReport(
        n_input_rows=n_input,
        n_unlabeled_dropped=n_unlabeled,
        n_duplicates_dropped=n_input - n_unlabeled - len(keep),
        n_label_conflicts=len(conflicts),
        conflict_sha256=sorted(d.hex() for d in conflicts),
    )
    return unified, report


@dataclass
class SplitPlan:
    seed: int
    assignment: list[str]  # per-row tag from PARTITIONS
    stratify: bool

    def indices(self, tag: str) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.assignment) if t == tag],
                        dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps({"seed": self.seed, "stratify": self.stratify,
                           "assignment": self.assignment}, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        obj = json.loads(text)
        return cls(seed=obj["seed"], assignment=obj["assignment"],
                   stratify=obj["stratify"])


def _carve_counts(n: int, val_fraction: float, test_fraction: float):
    n_val = int(round(val_fraction * n))
    n_test = int(round(test_fraction * n))
    return n_val, n_test


def split(store: DatasetStore, seed: int, val_fraction: float = 0.1,
          test_fraction: float = 0.1, stratify: bool = True) -> SplitPlan:
    """Carve validation and test sets, then halve the remaining pool into
    the two training partitions. Deterministic for a given seed."""
    if not (0 < val_fraction < 1 and 0 < test_fraction < 1
            and val_fraction + test_fraction < 1):
        raise DataError("fractions must lie in (0,1) and sum below 1")
    n = store.n_rows
    labels = store.labels
    if stratify and np.any(labels < 0):
        raise DataError("stratified split requires labels in {0,1}")
    rng = np.random.default_rng(seed)
    assignment = [""] * n

    if stratify:
        n_val_total, n_test_total = _carve_counts(n, val_fraction, test_fraction)
        class_indices = {c: np.flatnonzero(labels == c) for c in (0, 1)}
        for c, idx in class_indices.items():
            if len(idx) < len(PARTITIONS):
                raise DataError(
                    f"class {c} has {len(idx)} rows, fewer than "
                    f"{len(PARTITIONS)} partitions")
        # largest-remainder quotas keep per-class counts within 1 of proportional
        def class_quotas(part_size: int) -> dict[int, int]:
            exact = {c: part_size * len(idx) / n for c, idx in class_indices.items()}
            base = {c: int(np.floor(v)) for c, v in exact.items()}
            short = part_size - sum(base.values())
            order = sorted(exact, key=lambda c: (-(exact[c] - base[c]), c))
            for c in order[:short]:
                base[c] += 1
            return base

        val_quota = class_quotas(n_val_total)
        test_quota = class_quotas(n_test_total)
        flip = 0
        for c in sorted(class_indices):
            idx = class_indices[c]
            perm = idx[rng.permutation(len(idx))]
            n_val_c = val_quota[c]
            n_test_c = test_quota[c]
            pos = 0
            for i in perm[pos:pos + n_val_c]:
                assignment[i] = VALIDATION
            pos += n_val_c
            for i in perm[pos:pos + n_test_c]:
                assignment[i] = TEST
            pos += n_test_c
            pool = perm[pos:]
            half = len(pool) // 2
            extra = len(pool) - 2 * half
            # alternate which partition absorbs an odd leftover across classes
            a_count = half + (extra if flip % 2 == 0 else 0)
            flip += extra
            for i in pool[:a_count]:
                assignment[i] = TRAIN_A
            for i in pool[a_count:]:
                assignment[i] = TRAIN_B
    else:
        n_val, n_test = _carve_counts(n, val_fraction, test_fraction)
        perm = rng.permutation(n)
        pos = 0
        for i in perm[:n_val]:
            assignment[i] = VALIDATION
        pos += n_val
        for i in perm[pos:pos + n_test]:
            assignment[i] = TEST
        pos += n_test
        pool = perm[pos:]
        a_count = len(pool) - len(pool) // 2
        for i in pool[:a_count]:
            assignment[i] = TRAIN_A
        for i in pool[a_count:]:
            assignment[i] = TRAIN_B

    plan = SplitPlan(seed=seed, assignment=assignment, stratify=stratify)
    sizes = {tag: len(plan.indices(tag)) for tag in PARTITIONS}
    if abs(sizes[TRAIN_A] - sizes[TRAIN_B]) > 1:
        raise AssertionError(f"partition halves unbalanced: {sizes}")
    return plan


def save(store: DatasetStore, path) -> None:
    tags = sorted(set(store.source_tags))
    tag_index = {t: i for i, t in enumerate(tags)}
    if len(tags) > 0xFFFF:
        raise DataError("too many distinct source tags for u16 table")
    parts = [
        MAGIC,
        struct.pack("<IQI", VERSION, store.n_rows, store.n_dims),
        store.labels.astype(np.int8).tobytes(),
        b"".join(store.sha256),
        struct.pack("<I", len(tags)),
    ]
    for t in tags:
        enc = t.encode("utf-8")
        parts.append(struct.pack("<H", len(enc)))
        parts.append(enc)
    parts.append(np.array([tag_index[t] for t in store.source_tags],
                          dtype="<u2").tobytes())
    parts.append(np.ascontiguousarray(store.features, dtype="<f4").tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
        fh.write(struct.pack("<I", crc))
    import os
    os.replace(tmp, path)


def load(path) -> DatasetStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}")
    if len(blob) < 20:
        raise TruncatedError(f"{path}: header truncated at {len(blob)} bytes")
    version, n_rows, n_dims = struct.unpack_from("<IQI", blob, 4)
    if version != VERSION:
        raise VersionError(f"{path}: version {version}, expected {VERSION}")
    off = 20

    def need(count, what):
        nonlocal off
        if off + count > len(blob) - 4:
            raise TruncatedError(
                f"{path}: {what} needs {off + count + 4} bytes, file has {len(blob)}")
        start = off
        off += count
        return start

    start = need(n_rows, "labels")
    labels = np.frombuffer(blob, dtype=np.int8, count=n_rows, offset=start)
    start = need(32 * n_rows, "sha256 table")
    digests = [blob[start + 32 * i: start + 32 * (i + 1)] for i in range(n_rows)]
    start = need(4, "tag count")
    n_tags = struct.unpack_from("<I", blob, start)[0]
    tags = []
    for _ in range(n_tags):
        start = need(2, "tag length")
        tlen = struct.unpack_from("<H", blob, start)[0]
        start = need(tlen, "tag text")
        tags.append(blob[start:start + tlen].decode("utf-8"))
    start = need(2 * n_rows, "tag indices")
    tag_idx = np.frombuffer(blob, dtype="<u2", count=n_rows, offset=start)
    start = need(4 * n_rows * n_dims, "feature matrix")
    features = np.frombuffer(blob, dtype="<f4", count=n_rows * n_dims,
                             offset=start).reshape(n_rows, n_dims)
    if off != len(blob) - 4:
        raise TruncatedError(
            f"{path}: {len(blob) - 4 - off} trailing bytes before checksum")
    stored_crc = struct.unpack_from("<I", blob, off)[0]
    actual_crc = zlib.crc32(blob[:off]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"{path}: crc32 {actual_crc:#010x} != stored {stored_crc:#010x}")
    return DatasetStore(features=features.copy(), labels=labels.copy(),
                        sha256=digests,
                        source_tags=[tags[i] for i in tag_idx])


def from_jsonl(path, default_tag: str = "") -> DatasetStore:
    """Read extractor JSONL records into a store."""
    features, labels, digests, tags = [], [], [], []
    n_dims = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                vec = np.asarray(rec["features"], dtype=np.float32)
                digest = bytes.fromhex(rec["sha256"])
                label = int(rec["label"])
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{path}:{line_no}: bad record ({exc})") from exc
            if len(digest) != 32:
                raise DataError(f"{path}:{line_no}: sha256 must be 64 hex chars")
            if n_dims is None:
                n_dims = vec.size
            elif vec.size != n_dims:
                raise DataError(
                    f"{path}:{line_no}: {vec.size} dims, expected {n_dims}")
            features.append(vec)
            labels.append(label)
            digests.append(digest)
            tags.append(rec.get("source_tag", default_tag))
    if not features:
        raise DataError(f"{path}: no records")
    return DatasetStore(features=np.vstack(features), labels=np.array(labels, dtype=np.int8),
                        sha256=digests, source_tags=tags)
