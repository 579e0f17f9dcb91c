import numpy as np
import pytest

from malforest import forest
from malforest.errors import (
    ChecksumError,
    ConfigError,
    DataError,
    DimensionMismatchError,
)
from malforest.forest import ForestConfig
from malforest.forest.model import Ensemble
from malforest.metrics import auc

from forest_oracles import exact_root_split, logloss


def two_gaussians(n=2000, d=20, seed=0, shift=1.2):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(0, 1, (n // 2, d)),
                   rng.normal(shift, 1, (n - n // 2, d))])
    y = np.array([0] * (n // 2) + [1] * (n - n // 2))
    perm = rng.permutation(n)
    return x[perm], y[perm]


def xor_data(n=500, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 2, (n, 2)).astype(float)
    y = (x[:, 0].astype(int) ^ x[:, 1].astype(int))
    return x, y


class TestLogisticGradHess:
    def test_midpoint(self):
        g, h = forest.logistic_grad_hess(1.0, 0.0)
        assert g == -0.5 and h == 0.25

    def test_limits(self):
        g, h = forest.logistic_grad_hess(0.0, 40.0)
        assert g == pytest.approx(1.0, abs=1e-12)
        assert h == pytest.approx(0.0, abs=1e-12)

    def test_finite_difference(self):
        rng = np.random.default_rng(2)
        y = rng.integers(0, 2, 200).astype(float)
        s = rng.normal(0, 3, 200)
        g, h = forest.logistic_grad_hess(y, s)
        eps = 1e-6
        for i in range(200):
            up = logloss(y[i:i + 1], np.array([s[i] + eps]))
            down = logloss(y[i:i + 1], np.array([s[i] - eps]))
            fd = (up - down) / (2 * eps)
            assert g[i] == pytest.approx(fd, abs=1e-6)


class TestTrain:
    def test_two_gaussian_gbdt_auc(self):
        x, y = two_gaussians()
        e = forest.train(x, y, "gbdt", ForestConfig(trees=100, depth=4), seed=0)
        assert auc(forest.predict_proba(e, x), y) >= 0.99

    @pytest.mark.parametrize("variant", ["gbdt", "random_forest", "extra_trees"])
    def test_xor(self, variant):
        x, y = xor_data()
        e = forest.train(x, y, variant, ForestConfig(trees=50, depth=3), seed=0)
        acc = ((forest.predict_proba(e, x) >= 0.5).astype(int) == y).mean()
        assert acc >= 0.95

    @pytest.mark.parametrize("variant", ["gbdt", "random_forest", "extra_trees"])
    def test_bit_identical_reruns(self, variant, tmp_path):
        x, y = two_gaussians(n=300, d=8)
        cfg = ForestConfig(trees=20, depth=5, row_subsample=0.8,
                           feature_subsample=0.7)
        a = forest.train(x, y, variant, cfg, seed=11)
        b = forest.train(x, y, variant, cfg, seed=11)
        forest.save(a, tmp_path / "a.bin")
        forest.save(b, tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_single_class_fatal(self):
        x = np.random.default_rng(0).normal(size=(20, 3))
        with pytest.raises(DataError):
            forest.train(x, np.ones(20, dtype=int), "gbdt")

    def test_bad_hyperparameter_names_field(self):
        x, y = two_gaussians(n=60, d=3)
        with pytest.raises(ConfigError, match="learning_rate"):
            forest.train(x, y, "gbdt", ForestConfig(learning_rate=7.0))
        with pytest.raises(ConfigError, match="max_bins"):
            forest.train(x, y, "gbdt", ForestConfig(max_bins=1000))

    def test_growth_policies_differ(self):
        x, y = two_gaussians(n=400, d=10, seed=4)
        depth_wise = forest.train(x, y, "gbdt",
                                  ForestConfig(trees=10, depth=3), seed=0)
        leaf_wise = forest.train(x, y, "gbdt",
                                 ForestConfig(trees=10, depth=0, leaves=8,
                                              growth="leaf"), seed=0)
        assert leaf_wise.n_trees == depth_wise.n_trees == 10
        # leaf-wise trees respect the leaf budget
        for t in range(leaf_wise.n_trees):
            nodes = leaf_wise.tree_nodes(t)
            assert sum(1 for nd in nodes if nd.is_leaf) <= 8


class TestPredict:
    def test_zero_trees_balanced_prior(self):
        x, y = two_gaussians(n=100, d=4)
        e = forest.train(x, y, "gbdt", ForestConfig(trees=0), seed=0)
        out = forest.predict_proba(e, x)
        np.testing.assert_allclose(out, 0.5, atol=1e-12)

    def test_pure_positive_leaves_give_one(self):
        rng = np.random.default_rng(5)
        x = np.vstack([rng.uniform(0, 0.4, (50, 2)), rng.uniform(0.6, 1.0, (50, 2))])
        y = np.array([0] * 50 + [1] * 50)
        e = forest.train(x, y, "random_forest", ForestConfig(trees=15, depth=8), seed=0)
        pos_probe = np.full((5, 2), 0.9)
        np.testing.assert_allclose(forest.predict_proba(e, pos_probe), 1.0)

    def test_single_tree_leaf_fraction(self):
        # extra_trees with no bootstrap: a depth-1 tree's leaf fractions are
        # exact training-row fractions; 3 pos / 1 neg on the right side
        x = np.array([[0.0], [0.1], [0.8], [0.85], [0.9], [0.95]])
        y = np.array([0, 0, 0, 1, 1, 1])
        e = forest.train(x, y, "extra_trees", ForestConfig(trees=1, depth=1), seed=3)
        root = e.tree_nodes(0)[0]
        assert not root.is_leaf
        left = x[:, 0] < root.threshold
        for probe, side in [(np.array([root.threshold - 0.01]), left),
                            (np.array([root.threshold + 0.01]), ~left)]:
            expected = y[side].mean()
            assert forest.predict_proba(e, probe) == pytest.approx(expected)

    def test_probability_bounds(self):
        x, y = two_gaussians(n=200, d=6, seed=6)
        for variant in ("gbdt", "random_forest", "extra_trees"):
            e = forest.train(x, y, variant, ForestConfig(trees=25, depth=6), seed=1)
            p = forest.predict_proba(e, np.random.default_rng(0).normal(size=(50, 6)) * 10)
            assert np.all((p >= 0) & (p <= 1))

    def test_dimension_mismatch(self):
        x, y = two_gaussians(n=100, d=4)
        e = forest.train(x, y, "gbdt", ForestConfig(trees=5, depth=2), seed=0)
        with pytest.raises(DimensionMismatchError):
            forest.predict_proba(e, np.zeros((3, 7)))


class TestFeatureGains:
    def test_unused_features_zero(self):
        x, y = two_gaussians(n=300, d=6, seed=7)
        x = np.hstack([x, np.zeros((300, 2))])  # two constant features
        e = forest.train(x, y, "gbdt", ForestConfig(trees=20, depth=3), seed=0)
        gains = forest.feature_gains(e)
        assert gains[6] == 0.0 and gains[7] == 0.0
        assert gains[:6].sum() > 0

    def test_hand_built_single_split(self):
        e = Ensemble(
            variant="gbdt", config=ForestConfig(trees=1), seed=0,
            feature_count=5, base_score=0.0, learning_rate=0.1,
            feature=np.array([2, -1, -1], dtype=np.int32),
            threshold=np.array([0.5, 0.0, 0.0]),
            left=np.array([1, -1, -1], dtype=np.int32),
            right=np.array([2, -1, -1], dtype=np.int32),
            value=np.array([0.0, -0.3, 0.4]),
            gain=np.array([1.7, 0.0, 0.0]),
            tree_offsets=np.array([0, 3], dtype=np.int64),
        )
        np.testing.assert_array_equal(forest.feature_gains(e),
                                      [0.0, 0.0, 1.7, 0.0, 0.0])

    def test_planted_feature_top_gain(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x = rng.uniform(size=(400, 12))
            y = (x[:, 7] > 0.5).astype(int)
            e = forest.train(x, y, "gbdt", ForestConfig(trees=30, depth=4), seed=seed)
            gains = forest.feature_gains(e)
            assert int(np.argmax(gains)) == 7, f"seed {seed}"


class TestInvariants:
    def test_train_logloss_non_increasing(self):
        x, y = two_gaussians(n=500, d=10, seed=8)
        e = forest.train(x, y, "gbdt", ForestConfig(trees=40, depth=4), seed=0)
        staged = forest.staged_scores(e, x)
        losses = [logloss(y, e.base_score * np.ones(len(y)))]
        losses += [logloss(y, staged[:, t]) for t in range(e.n_trees)]
        diffs = np.diff(losses)
        assert np.all(diffs <= 1e-9), f"max increase {diffs.max()}"

    def test_histogram_matches_exact_scan(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(50, 2000))
            d = int(rng.integers(2, 12))
            # <= 255 distinct values per feature keeps binning lossless
            x = rng.integers(0, 200, size=(n, d)).astype(np.float64) / 40.0
            y = (x @ rng.normal(size=d) + rng.normal(0, 0.3, n) > 0).astype(int)
            if y.min() == y.max():
                continue
            e = forest.train(x, y, "gbdt", ForestConfig(trees=1, depth=1), seed=0)
            root = e.tree_nodes(0)[0]
            want_f, want_thr, want_gain = exact_root_split(x, y)
            if want_f < 0:
                assert root.is_leaf, f"seed {seed}"
                continue
            assert root.feature_index == want_f, f"seed {seed}"
            assert root.threshold == pytest.approx(want_thr, abs=1e-12)
            assert root.split_gain == pytest.approx(want_gain, rel=1e-9)

    def test_forest_averaging_band(self):
        x, y = two_gaussians()
        a = forest.train(x, y, "random_forest", ForestConfig(trees=40, depth=8), seed=1)
        b = forest.train(x, y, "random_forest", ForestConfig(trees=40, depth=8), seed=2)
        pa = forest.predict_proba(a, x)
        pb = forest.predict_proba(b, x)
        avg_auc = auc((pa + pb) / 2, y)
        assert avg_auc >= max(auc(pa, y), auc(pb, y)) - 0.02

    def test_split_gains_non_negative(self):
        x, y = two_gaussians(n=300, d=8, seed=9)
        for variant in ("gbdt", "random_forest", "extra_trees"):
            e = forest.train(x, y, variant, ForestConfig(trees=10, depth=6), seed=0)
            split_mask = e.feature >= 0
            assert np.all(e.gain[split_mask] >= 0)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        x, y = two_gaussians(n=200, d=5)
        e = forest.train(x, y, "gbdt", ForestConfig(trees=8, depth=3), seed=5)
        path = tmp_path / "m.bin"
        forest.save(e, path)
        again = forest.load(path)
        assert again.variant == e.variant
        assert again.config == e.config
        np.testing.assert_array_equal(again.feature, e.feature)
        np.testing.assert_array_equal(again.threshold, e.threshold)
        np.testing.assert_array_equal(again.value, e.value)
        probe = np.random.default_rng(1).normal(size=(20, 5))
        np.testing.assert_array_equal(forest.predict_proba(e, probe),
                                      forest.predict_proba(again, probe))

    def test_corruption_detected(self, tmp_path):
        x, y = two_gaussians(n=100, d=4)
        e = forest.train(x, y, "gbdt", ForestConfig(trees=3, depth=2), seed=0)
        path = tmp_path / "m.bin"
        forest.save(e, path)
        blob = bytearray(path.read_bytes())
        blob[-12] ^= 0x55
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumError):
            forest.load(path)
