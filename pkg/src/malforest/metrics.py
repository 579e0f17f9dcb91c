"""Threshold-based evaluation: ROC AUC, best-F1 threshold selection, and
TPR at fixed false-positive-rate operating points.

Operating points are conservative: the threshold is the smallest score
whose achieved FPR does not exceed the target, with no interpolation
between thresholds, matching deployment semantics where the false-alarm
budget is a hard limit.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError


def _check_binary(labels: np.ndarray) -> None:
    classes = np.unique(labels)
    if not np.array_equal(classes, [0, 1]):
        raise DataError(f"need both classes present, got labels {classes.tolist()}")


def auc(scores, labels) -> float:
    """Rank-sum ROC AUC with ties counted as one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores), dtype=np.float64)
    i = 0
    while i < len(sorted_scores):
        j = i
        while j + 1 < len(sorted_scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    rank_sum = ranks[labels == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def tpr_at_fpr(scores, labels, target_fpr: float) -> tuple[float, float]:
    """TPR and threshold at the most permissive threshold with FPR <= target.

    The threshold is the smallest score value admitting no more than
    floor(target * n_neg) false positives; when even the largest score
    admits too many, the threshold is +inf and TPR is 0.
    """
    if not (0.0 <= target_fpr < 1.0):
        raise DataError(f"target_fpr must lie in [0, 1), got {target_fpr}")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    neg = scores[labels == 0]
    pos = scores[labels == 1]
    candidates = np.unique(scores)
    # fraction of negatives >= candidate, computed by position in sorted negs
    neg_sorted = np.sort(neg)
    fp = len(neg) - np.searchsorted(neg_sorted, candidates, side="left")
    admissible = candidates[fp / len(neg) <= target_fpr]
    if len(admissible) == 0:
        return 0.0, float("inf")
    threshold = float(admissible[0])
    tpr = float((pos >= threshold).mean())
    return tpr, threshold


def best_f1(scores, labels) -> tuple[float, float]:
    """Maximize F1 over thresholds; ties resolve to the highest threshold."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    _check_binary(labels)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp_cum = np.cumsum(sorted_labels == 1)
    fp_cum = np.cumsum(sorted_labels == 0)
    n_pos = int((labels == 1).sum())
    # candidate thresholds: each unique score (taking all rows >= it), plus
    # a sentinel above the maximum (flag nothing -> F1 = 0)
    last_of_run = np.flatnonzero(np.diff(sorted_scores, append=-np.inf) != 0)
    tp = tp_cum[last_of_run]
    fp = fp_cum[last_of_run]
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)
    best = -1.0
    best_thr = np.inf
    for i in range(len(f1)):  # descending thresholds; strict > keeps highest
        if f1[i] > best:
            best = float(f1[i])
            best_thr = float(sorted_scores[last_of_run[i]])
    if best <= 0.0:
        return 0.0, float("inf")
    return best, best_thr


def f1_at_threshold(scores, labels, threshold: float) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


@dataclass
class EvalReport:
    dataset_tag: str
    n_pos: int
    n_neg: int
    f1_best: float
    f1_threshold: float
    f1_at_stored_threshold: float
    stored_threshold: float
    auc: float
    tpr_at_1pct_fpr: float
    threshold_at_1pct_fpr: float
    tpr_at_01pct_fpr: float
    threshold_at_01pct_fpr: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def score_report(scores, labels, dataset_tag: str,
                 stored_threshold: float) -> EvalReport:
    """Assemble the full metric suite from fused scores."""
    labels = np.asarray(labels)
    _check_binary(labels)
    f1b, f1_thr = best_f1(scores, labels)
    tpr1, thr1 = tpr_at_fpr(scores, labels, 0.01)
    tpr01, thr01 = tpr_at_fpr(scores, labels, 0.001)
    return EvalReport(
        dataset_tag=dataset_tag,
        n_pos=int((labels == 1).sum()),
        n_neg=int((labels == 0).sum()),
        f1_best=f1b,
        f1_threshold=f1_thr,
        f1_at_stored_threshold=f1_at_threshold(scores, labels, stored_threshold),
        stored_threshold=float(stored_threshold),
        auc=auc(scores, labels),
        tpr_at_1pct_fpr=tpr1,
        threshold_at_1pct_fpr=thr1,
        tpr_at_01pct_fpr=tpr01,
        threshold_at_01pct_fpr=thr01,
    )


def evaluate(pair_model, store, scaler, reducer,
             dataset_tag: str | None = None) -> EvalReport:
    """Frozen-pipeline evaluation: scale, reduce, fuse, report.

    Nothing is refit. Recorded artifact fingerprints must chain: the pair
    must reference this reducer and scaler, and the reducer must have been
    fit behind this scaler. Empty references (artifacts built outside the
    managed pipeline) skip their check.
    """
    from . import pair as pair_mod
    from . import reduce as reduce_mod
    from . import scaling
    from .errors import ArtifactMismatchError

    scaler_fp = scaler.fingerprint()
    reducer_fp = reduce_mod.reducer_fingerprint(reducer)
    if pair_model.scaler_ref and pair_model.scaler_ref != scaler_fp:
        raise ArtifactMismatchError(
            f"pair was trained behind scaler {pair_model.scaler_ref[:12]}, "
            f"got {scaler_fp[:12]}")
    if pair_model.reducer_ref and pair_model.reducer_ref != reducer_fp:
        raise ArtifactMismatchError(
            f"pair was trained behind reducer {pair_model.reducer_ref[:12]}, "
            f"got {reducer_fp[:12]}")
    if reducer.scaler_ref and reducer.scaler_ref != scaler_fp:
        raise ArtifactMismatchError(
            f"reducer was fit behind scaler {reducer.scaler_ref[:12]}, "
            f"got {scaler_fp[:12]}")

    scaled = scaling.transform(store.features, scaler)
    reduced = reduce_mod.apply_reducer(reducer, scaled)
    scores, _ = pair_mod.predict(pair_model, reduced)
    if dataset_tag is None:
        dataset_tag = store.source_tags[0] if store.source_tags else ""
    return score_report(scores, store.labels, dataset_tag,
                        stored_threshold=pair_model.decision_threshold)
