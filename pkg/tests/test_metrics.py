import numpy as np
import pytest

from malforest.errors import DataError
from malforest.metrics import (
    EvalReport,
    auc,
    best_f1,
    f1_at_threshold,
    score_report,
    tpr_at_fpr,
)


def auc_pair_oracle(scores, labels):
    """O(n^2) pairwise comparison, ties as one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def best_f1_oracle(scores, labels):
    """Exhaustive scan over all distinct thresholds plus a sentinel."""
    candidates = sorted(set(scores), reverse=True)
    best, best_thr = 0.0, float("inf")
    for thr in candidates:
        f1 = f1_at_threshold(scores, labels, thr)
        if f1 > best:
            best, best_thr = f1, thr
    return best, best_thr


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0

    def test_three_of_four_pairs(self):
        assert auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75

    def test_all_ties_half(self):
        assert auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_single_class_fatal(self):
        with pytest.raises(DataError):
            auc([0.1, 0.2], [1, 1])

    def test_matches_pair_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = rng.integers(4, 200)
            scores = rng.choice([0.1, 0.25, 0.5, 0.9], size=n)  # force ties
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            assert auc(scores, labels) == pytest.approx(
                auc_pair_oracle(scores, labels), abs=1e-12)

    def test_negation_symmetry(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=60)
        labels = rng.integers(0, 2, 60)
        labels[0], labels[1] = 0, 1
        assert auc(scores, labels) + auc(-scores, labels) == pytest.approx(1.0)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(0.01, 0.99, 50)
        labels = rng.integers(0, 2, 50)
        labels[:2] = [0, 1]
        a = auc(scores, labels)
        assert auc(np.log(scores), labels) == pytest.approx(a)
        assert auc(scores ** 3, labels) == pytest.approx(a)


class TestTprAtFpr:
    def test_perfect_any_target(self):
        scores = [0.9, 0.8, 0.2, 0.1]
        labels = [1, 1, 0, 0]
        for target in (0.0, 0.001, 0.01, 0.5):
            tpr, thr = tpr_at_fpr(scores, labels, target)
            assert tpr == 1.0

    def test_zero_fp_budget_with_ten_negatives(self):
        rng = np.random.default_rng(3)
        neg = rng.uniform(0, 0.5, 10)
        pos = np.array([0.6, 0.7, 0.4])
        scores = np.concatenate([neg, pos])
        labels = np.array([0] * 10 + [1] * 3)
        tpr, thr = tpr_at_fpr(scores, labels, 0.01)
        assert thr > neg.max()
        # only the two positives above every negative are caught
        assert tpr == pytest.approx(2 / 3)
        achieved_fpr = np.mean(neg >= thr)
        assert achieved_fpr == 0.0

    def test_target_zero(self):
        scores = [0.1, 0.5, 0.5, 0.9]
        labels = [0, 0, 1, 1]
        tpr, thr = tpr_at_fpr(scores, labels, 0.0)
        assert tpr == 0.5  # the 0.5-scoring positive ties a negative
        assert thr == 0.9

    def test_nothing_admissible(self):
        # negative holds the single maximum score
        tpr, thr = tpr_at_fpr([0.9, 0.5], [0, 1], 0.4)
        assert tpr == 0.0 and thr == float("inf")

    def test_achieved_fpr_never_exceeds_target(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            n = rng.integers(10, 300)
            scores = rng.normal(size=n)
            labels = rng.integers(0, 2, n)
            labels[:2] = [0, 1]
            neg = scores[labels == 0]
            for target in (0.0, 0.001, 0.01, 0.05):
                tpr, thr = tpr_at_fpr(scores, labels, target)
                assert np.mean(neg >= thr) <= target + 1e-15

    def test_monotone_in_target(self):
        rng = np.random.default_rng(5)
        scores = rng.normal(size=200)
        labels = rng.integers(0, 2, 200)
        labels[:2] = [0, 1]
        tprs = [tpr_at_fpr(scores, labels, t)[0]
                for t in (0.0, 0.001, 0.01, 0.05, 0.2)]
        assert all(a <= b + 1e-15 for a, b in zip(tprs, tprs[1:]))


class TestBestF1:
    def test_simple(self):
        f1, thr = best_f1([0.9, 0.8, 0.2], [1, 1, 0])
        assert f1 == 1.0 and thr == 0.8

    def test_one_pos_one_neg_reversed(self):
        f1, thr = best_f1([0.2, 0.9], [1, 0])
        assert f1 == pytest.approx(2 / 3)
        assert thr == 0.2

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(40):
            n = rng.integers(4, 200)
            scores = np.round(rng.uniform(size=n), 2)  # ties likely
            labels = rng.integers(0, 2, n)
            if labels.min() == labels.max():
                continue
            got_f1, got_thr = best_f1(scores, labels)
            want_f1, want_thr = best_f1_oracle(scores.tolist(), labels.tolist())
            assert got_f1 == pytest.approx(want_f1, abs=1e-12)
            if want_f1 > 0:
                assert got_thr == want_thr

    def test_tie_takes_highest_threshold(self):
        # thresholds 0.9 and 0.8 both give F1 = 2/3
        scores = [0.9, 0.8, 0.7]
        labels = [1, 0, 1]
        f1, thr = best_f1(scores, labels)
        oracle = [(f1_at_threshold(scores, labels, t), t) for t in (0.9, 0.8, 0.7)]
        best_val = max(v for v, _ in oracle)
        best_thr = max(t for v, t in oracle if v == best_val)
        assert f1 == pytest.approx(best_val) and thr == best_thr


class TestReport:
    def test_json_round_trip(self):
        rng = np.random.default_rng(7)
        scores = rng.uniform(size=50)
        labels = rng.integers(0, 2, 50)
        labels[:2] = [0, 1]
        report = score_report(scores, labels, "unit", stored_threshold=0.5)
        again = EvalReport.from_json(report.to_json())
        assert again == report
        assert 0.0 <= report.auc <= 1.0
        assert report.n_pos >= 1 and report.n_neg >= 1
