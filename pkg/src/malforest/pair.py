"""Two-instance model pairs fused by weighted soft voting.

Each estimator trains twice, once per training partition, with separate
hyperparameter searches. At inference the two probability outputs combine
as w * p1 + (1 - w) * p2 with w swept over the 11-point grid
{0.0, 0.1, ..., 1.0}; the grid weight with the highest validation best-F1
is kept, ties resolving toward 0.5 and then toward the smaller w. The
decision threshold is the best-F1 threshold at the chosen weight.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import forest, metrics, tuner
from .errors import DataError
from .forest import Ensemble
from .tuner import Budget

WEIGHT_GRID_TENTHS = tuple(range(11))  # w = tenths / 10


@dataclass
class PairModel:
    model_1: Ensemble
    model_2: Ensemble
    w_tenths: int              # fusion weight stored exactly as integer tenths
    decision_threshold: float
    reducer_ref: str = ""
    scaler_ref: str = ""

    @property
    def w(self) -> float:
        return self.w_tenths / 10.0


def fuse(p1, p2, w: float):
    """Eq-style weighted soft vote: w * p1 + (1 - w) * p2."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if np.any(p1 < 0) or np.any(p1 > 1) or np.any(p2 < 0) or np.any(p2 > 1):
        raise DataError("probabilities must lie in [0, 1]")
    if not 0.0 <= w <= 1.0:
        raise DataError(f"w must lie in [0, 1], got {w}")
    out = w * p1 + (1.0 - w) * p2
    return float(out) if out.ndim == 0 else out


def sweep_weight(model_1: Ensemble, model_2: Ensemble, val_x, val_y):
    """Evaluate the 11-point weight grid on validation data.

    Returns (w_tenths, decision_threshold, sweep) where sweep maps each
    grid weight to its best-F1 value.
    """
    val_y = np.asarray(val_y)
    if np.unique(val_y).size < 2:
        raise DataError("validation set must contain both classes")
    p1 = forest.predict_proba(model_1, val_x)
    p2 = forest.predict_proba(model_2, val_x)
    sweep = []
    for tenths in WEIGHT_GRID_TENTHS:
        fused = fuse(p1, p2, tenths / 10.0)
        f1, threshold = metrics.best_f1(fused, val_y)
        sweep.append({"w_tenths": tenths, "f1": f1, "threshold": threshold})
    best = max(sweep, key=lambda e: (e["f1"], -abs(e["w_tenths"] - 5),
                                     -e["w_tenths"]))
    return best["w_tenths"], best["threshold"], sweep


def _check_disjoint(*stores) -> None:
    seen: dict[bytes, str] = {}
    overlap = 0
    for name, store in stores:
        for digest in store.sha256:
            if digest in seen and seen[digest] != name:
                overlap += 1
            else:
                seen[digest] = name
    if overlap:
        raise DataError(f"partitions share {overlap} sha256 identities; "
                        "splits must be disjoint")


def train_pair(train_a, train_b, val, estimator: str,
               budget: Budget | None = None, seed: int = 0,
               reducer_ref: str = "", scaler_ref: str = "",
               features=None):
    """Tune and train one model per partition, then select the fusion weight.

    The three stores must be pairwise disjoint by sha256. `features` maps a
    store to its model-input matrix (defaults to store.features); reduced
    inputs are passed through it.

    Returns (PairModel, logs) where logs carries both searches and the sweep.
    """
    _check_disjoint(("train_a", train_a), ("train_b", train_b), ("val", val))
    get = features if features is not None else (lambda s: s.features)
    ax, ay = get(train_a), train_a.labels
    bx, by = get(train_b), train_b.labels
    vx, vy = get(val), val.labels

    cfg_1, log_1, models_1 = tuner.search(estimator, ax, ay, vx, vy, budget,
                                          seed=tuner.trial_seed(seed, 1),
                                          keep_models=True)
    cfg_2, log_2, models_2 = tuner.search(estimator, bx, by, vx, vy, budget,
                                          seed=tuner.trial_seed(seed, 2),
                                          keep_models=True)
    model_1 = models_1[log_1.best_index]
    model_2 = models_2[log_2.best_index]
    w_tenths, threshold, sweep = sweep_weight(model_1, model_2, vx, vy)
    pair = PairModel(model_1=model_1, model_2=model_2, w_tenths=w_tenths,
                     decision_threshold=threshold,
                     reducer_ref=reducer_ref, scaler_ref=scaler_ref)
    logs = {"search_1": log_1, "search_2": log_2, "weight_sweep": sweep}
    return pair, logs


def predict(pair: PairModel, x):
    """Fused score and verdict; scores at or above the threshold are malicious."""
    x = np.asarray(x, dtype=np.float64)
    vector_in = x.ndim == 1
    scores = fuse(forest.predict_proba(pair.model_1, x),
                  forest.predict_proba(pair.model_2, x), pair.w)
    scores = np.atleast_1d(scores)
    verdicts = np.where(scores >= pair.decision_threshold, "malicious", "benign")
    if vector_in:
        return float(scores[0]), str(verdicts[0])
    return scores, verdicts


def save_pair(pair: PairModel, dir_path, logs=None) -> None:
    """Bundle directory: two model files plus fusion metadata JSON."""
    os.makedirs(dir_path, exist_ok=True)
    forest.save(pair.model_1, os.path.join(dir_path, "model_1.bin"))
    forest.save(pair.model_2, os.path.join(dir_path, "model_2.bin"))
    meta = {
        "format": "pair",
        "version": 1,
        "w_tenths": pair.w_tenths,
        "decision_threshold": pair.decision_threshold,
        "reducer_ref": pair.reducer_ref,
        "scaler_ref": pair.scaler_ref,
    }
    with open(os.path.join(dir_path, "fusion.json"), "w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True))
    if logs is not None:
        payload = {
            "search_1": json.loads(logs["search_1"].to_json()),
            "search_2": json.loads(logs["search_2"].to_json()),
            "weight_sweep": logs["weight_sweep"],
        }
        with open(os.path.join(dir_path, "tuner.json"), "w", encoding="utf-8") as fh:
            fh.write(json.dumps(payload, sort_keys=True))


def load_pair(dir_path) -> PairModel:
    with open(os.path.join(dir_path, "fusion.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    if meta.get("format") != "pair" or meta.get("version") != 1:
        raise DataError(f"{dir_path}: not a pair bundle")
    return PairModel(
        model_1=forest.load(os.path.join(dir_path, "model_1.bin")),
        model_2=forest.load(os.path.join(dir_path, "model_2.bin")),
        w_tenths=int(meta["w_tenths"]),
        decision_threshold=float(meta["decision_threshold"]),
        reducer_ref=meta["reducer_ref"],
        scaler_ref=meta["scaler_ref"],
    )
