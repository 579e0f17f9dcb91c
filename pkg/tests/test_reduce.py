import numpy as np
import pytest

from malforest import reduce as dimred
from malforest.errors import DataError, DimensionMismatchError
from malforest.forest import ForestConfig


def brute_force_covariance_trace(x):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    total = 0.0
    for j in range(x.shape[1]):
        total += ((x[:, j] - mean[j]) ** 2).sum() / (x.shape[0] - 1)
    return total


class TestPca:
    def test_single_axis_variance(self):
        rng = np.random.default_rng(0)
        x = np.zeros((40, 5))
        x[:, 0] = rng.normal(0, 2, 40)
        p = dimred.fit_pca(x, 3)
        np.testing.assert_allclose(np.abs(p.components[0]), [1, 0, 0, 0, 0], atol=1e-9)
        assert p.components[0, 0] > 0  # sign convention
        assert p.explained_variance[0] == pytest.approx(x[:, 0].var(ddof=1))
        np.testing.assert_allclose(p.explained_variance[1:], 0.0, atol=1e-9)

    def test_total_variance_matches_trace(self):
        rng = np.random.default_rng(1)
        for n, d in [(50, 8), (200, 30), (500, 64)]:
            x = rng.normal(size=(n, d)) @ rng.normal(size=(d, d))
            k = min(n - 1, d)
            p = dimred.fit_pca(x, k)
            trace = brute_force_covariance_trace(x)
            assert p.explained_variance.sum() == pytest.approx(trace, rel=1e-8)

    def test_hand_computed_2d(self):
        x = np.zeros((3, 4))
        x[:, 0] = [1, 2, 3]
        x[:, 1] = [1, 2, 3]
        p = dimred.fit_pca(x, 2)
        np.testing.assert_allclose(p.components[0, :2], [1 / np.sqrt(2)] * 2,
                                   atol=1e-10)
        np.testing.assert_allclose(p.components[0, 2:], 0.0, atol=1e-10)
        # covariance of [(1,1),(2,2),(3,3)] has eigenvalue 2 along (1,1)/sqrt(2)
        assert p.explained_variance[0] == pytest.approx(2.0, abs=1e-10)

    def test_orthonormality_and_ordering(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(120, 24)) * rng.uniform(0.1, 5.0, 24)
        p = dimred.fit_pca(x, 10)
        gram = p.components @ p.components.T
        np.testing.assert_allclose(gram, np.eye(10), atol=1e-8)
        assert np.all(np.diff(p.explained_variance) <= 1e-12)

    def test_project_mean_is_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 8))
        p = dimred.fit_pca(x, 4)
        np.testing.assert_allclose(dimred.project(p, p.mean), 0.0, atol=1e-12)

    def test_project_component_gives_unit_axis(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(60, 8))
        p = dimred.fit_pca(x, 4)
        out = dimred.project(p, p.mean + p.components[0])
        expected = np.zeros(4)
        expected[0] = 1.0
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_reconstruction_round_trip(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 6))
        p = dimred.fit_pca(x, 6)  # full rank
        z = dimred.project(p, x)
        back = p.mean + z @ p.components
        assert np.linalg.norm(x - back) <= 1e-6

    def test_projection_linearity(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(50, 10))
        p = dimred.fit_pca(x, 5)
        for _ in range(5):
            a, b = rng.normal(size=(2, 10))
            lhs = dimred.project(p, a) + dimred.project(p, b)
            rhs = dimred.project(p, a + b - p.mean)
            np.testing.assert_allclose(lhs, rhs, atol=1e-9)

    def test_insufficient_rows_fatal(self):
        with pytest.raises(DataError):
            dimred.fit_pca(np.zeros((3, 10)), 5)

    def test_projection_dim_mismatch(self):
        p = dimred.fit_pca(np.random.default_rng(0).normal(size=(20, 6)), 3)
        with pytest.raises(DimensionMismatchError):
            dimred.project(p, np.zeros(9))


class TestXgbfs:
    def test_planted_feature_selected(self):
        for seed in range(5):
            rng = np.random.default_rng(seed + 100)
            x = rng.uniform(size=(300, 20))
            y = (x[:, 7] > 0.5).astype(int)
            mask = dimred.fit_xgbfs(x, y, k=4,
                                    gbdt_config=ForestConfig(trees=40, depth=4),
                                    seed=seed)
            assert 7 in mask.indices, f"seed {seed}"
            top = mask.indices[np.argmax(mask.gains)]
            assert top == 7, f"seed {seed}"

    def test_k_equals_dims_saturates(self):
        rng = np.random.default_rng(8)
        x = rng.uniform(size=(80, 6))
        y = (x[:, 0] > 0.5).astype(int)
        mask = dimred.fit_xgbfs(x, y, k=6,
                                gbdt_config=ForestConfig(trees=10, depth=3))
        np.testing.assert_array_equal(mask.indices, np.arange(6))

    def test_duplicated_informative_columns(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(size=(400, 10))
        x[:, 5] = x[:, 2]  # exact duplicate of the informative column
        y = (x[:, 2] > 0.5).astype(int)
        # feature subsampling lets both duplicates accumulate gain
        cfg = ForestConfig(trees=60, depth=3, feature_subsample=0.4)
        mask = dimred.fit_xgbfs(x, y, k=2, gbdt_config=cfg, seed=0)
        assert set(mask.indices.tolist()) == {2, 5}

    def test_min_rows_floor(self):
        x = np.random.default_rng(0).uniform(size=(20, 4))
        y = (x[:, 0] > 0.5).astype(int)
        with pytest.raises(DataError, match="50"):
            dimred.fit_xgbfs(x, y, k=2)

    def test_single_class_fatal(self):
        x = np.random.default_rng(0).uniform(size=(100, 4))
        with pytest.raises(DataError):
            dimred.fit_xgbfs(x, np.ones(100, dtype=int), k=2,
                             gbdt_config=ForestConfig(trees=5, depth=2))

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        x = rng.uniform(size=(200, 15))
        y = (x[:, 3] + x[:, 4] > 1.0).astype(int)
        cfg = ForestConfig(trees=20, depth=3)
        a = dimred.fit_xgbfs(x, y, k=5, gbdt_config=cfg, seed=1)
        b = dimred.fit_xgbfs(x, y, k=5, gbdt_config=cfg, seed=1)
        np.testing.assert_array_equal(a.indices, b.indices)
        np.testing.assert_array_equal(a.gains, b.gains)


class TestSelect:
    def test_identity_mask(self):
        mask = dimred.FeatureMask(indices=np.arange(4, dtype=np.int32),
                                  gains=np.zeros(4), n_dims=4)
        x = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(dimred.select(mask, x), x)

    def test_gather_order(self):
        mask = dimred.FeatureMask(indices=np.array([1, 3], dtype=np.int32),
                                  gains=np.zeros(2), n_dims=4)
        np.testing.assert_array_equal(dimred.select(mask, np.array([10., 20., 30., 40.])),
                                      [20., 40.])

    def test_dim_mismatch(self):
        mask = dimred.FeatureMask(indices=np.array([0], dtype=np.int32),
                                  gains=np.zeros(1), n_dims=4)
        with pytest.raises(DimensionMismatchError):
            dimred.select(mask, np.zeros(5))


class TestReducerIO:
    def test_pca_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(50, 12))
        p = dimred.fit_pca(x, 4, train_fingerprint="abc", scaler_ref="def")
        path = tmp_path / "reducer.bin"
        dimred.save_reducer(p, path)
        again = dimred.load_reducer(path)
        np.testing.assert_array_equal(again.mean, p.mean)
        np.testing.assert_array_equal(again.components, p.components)
        np.testing.assert_allclose(again.explained_variance, p.explained_variance)
        assert again.train_fingerprint == "abc" and again.scaler_ref == "def"

    def test_mask_round_trip(self, tmp_path):
        mask = dimred.FeatureMask(indices=np.array([2, 5, 9], dtype=np.int32),
                                  gains=np.array([3.0, 2.0, 1.0]),
                                  n_dims=16, train_fingerprint="t",
                                  scaler_ref="s")
        path = tmp_path / "reducer.json"
        dimred.save_reducer(mask, path)
        again = dimred.load_reducer(path)
        np.testing.assert_array_equal(again.indices, mask.indices)
        np.testing.assert_array_equal(again.gains, mask.gains)
        assert again.n_dims == 16
