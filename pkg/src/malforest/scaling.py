"""Two-stage feature scaling fit on the training partition only.

Stage one centers each feature on its median and divides by the IQR
(linear-interpolation quantiles; zero IQR falls back to a divisor of 1 so
dimensionality never changes). Stage two min-max rescales the robust-scaled
training values into [0, 1]. At inference, out-of-range values are clipped,
since cross-dataset inputs routinely overshoot the training range.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionMismatchError
from .store import DatasetStore

FORMAT_VERSION = 1


@dataclass
class ScalerParams:
    median: np.ndarray     # per-feature f64
    iqr_scale: np.ndarray  # per-feature f64, > 0
    post_min: np.ndarray   # min of robust-scaled training data
    post_max: np.ndarray
    fitted_on: str         # training-set identity fingerprint

    @property
    def n_dims(self) -> int:
        return len(self.median)

    def to_json(self) -> str:
        return json.dumps({
            "format": "scaler",
            "version": FORMAT_VERSION,
            "fitted_on": self.fitted_on,
            "median": self.median.tolist(),
            "iqr_scale": self.iqr_scale.tolist(),
            "post_min": self.post_min.tolist(),
            "post_max": self.post_max.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScalerParams":
        obj = json.loads(text)
        if obj.get("format") != "scaler":
            raise DataError("not a scaler artifact")
        if obj.get("version") != FORMAT_VERSION:
            raise DataError(f"scaler version {obj.get('version')}, "
                            f"expected {FORMAT_VERSION}")
        return cls(
            median=np.asarray(obj["median"], dtype=np.float64),
            iqr_scale=np.asarray(obj["iqr_scale"], dtype=np.float64),
            post_min=np.asarray(obj["post_min"], dtype=np.float64),
            post_max=np.asarray(obj["post_max"], dtype=np.float64),
            fitted_on=obj["fitted_on"],
        )

    def fingerprint(self) -> str:
        import hashlib
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "ScalerParams":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def fit(train: DatasetStore) -> ScalerParams:
    """Fit robust and min-max statistics on the training store."""
    if train.n_rows == 0:
        raise DataError("cannot fit scaler on an empty store")
    if np.any(train.labels < 0):
        raise DataError("scaler must be fit on labeled rows only")
    x = train.features.astype(np.float64)
    median = np.median(x, axis=0)
    q1 = np.percentile(x, 25, axis=0, method="linear")
    q3 = np.percentile(x, 75, axis=0, method="linear")
    iqr = q3 - q1
    iqr[iqr == 0] = 1.0
    robust = (x - median) / iqr
    return ScalerParams(
        median=median,
        iqr_scale=iqr,
        post_min=robust.min(axis=0),
        post_max=robust.max(axis=0),
        fitted_on=train.fingerprint(),
    )


def transform(x: np.ndarray, params: ScalerParams) -> np.ndarray:
    """Apply the frozen two-stage transform; output lies in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    vector_in = x.ndim == 1
    if vector_in:
        x = x[None, :]
    if x.shape[1] != params.n_dims:
        raise DimensionMismatchError(
            f"input has {x.shape[1]} dims, scaler expects {params.n_dims}")
    robust = (x - params.median) / params.iqr_scale
    span = params.post_max - params.post_min
    degenerate = span == 0
    safe_span = np.where(degenerate, 1.0, span)
    out = np.clip((robust - params.post_min) / safe_span, 0.0, 1.0)
    out[:, degenerate] = 0.0
    return out[0] if vector_in else out


def transform_store(store: DatasetStore, params: ScalerParams) -> DatasetStore:
    return DatasetStore(
        features=transform(store.features, params).astype(np.float32),
        labels=store.labels,
        sha256=store.sha256,
        source_tags=store.source_tags,
    )
