import numpy as np
import pytest

from malforest import scaling
from malforest.errors import DataError, DimensionMismatchError
from malforest.store import DatasetStore

from test_store import make_store


def store_from_matrix(x, labels=None):
    x = np.asarray(x, dtype=np.float32)
    n = x.shape[0]
    if labels is None:
        labels = [i % 2 for i in range(n)]
    return DatasetStore(features=x, labels=np.array(labels, dtype=np.int8),
                        sha256=[bytes([i]) * 32 for i in range(n)],
                        source_tags=["t"] * n)


def quantile_oracle(sorted_vals, q):
    """Linear-interpolation quantile, spelled out."""
    pos = q * (len(sorted_vals) - 1)
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    frac = pos - lo
    return sorted_vals[lo] * (1 - frac) + sorted_vals[hi] * frac


def test_outlier_column_fit():
    col = [1.0, 2.0, 3.0, 4.0, 100.0]
    params = scaling.fit(store_from_matrix(np.array(col)[:, None],
                                           labels=[0, 1, 0, 1, 0]))
    assert params.median[0] == 3.0
    assert params.iqr_scale[0] == quantile_oracle(col, 0.75) - quantile_oracle(col, 0.25) == 2.0


def test_constant_column_fallback():
    params = scaling.fit(store_from_matrix(np.full((3, 1), 5.0), labels=[0, 1, 0]))
    assert params.median[0] == 5.0
    assert params.iqr_scale[0] == 1.0


def test_single_row_degenerate():
    params = scaling.fit(store_from_matrix([[7.0, -2.0]], labels=[1]))
    np.testing.assert_array_equal(params.median, [7.0, -2.0])
    np.testing.assert_array_equal(params.iqr_scale, [1.0, 1.0])
    np.testing.assert_array_equal(params.post_min, [0.0, 0.0])
    np.testing.assert_array_equal(params.post_max, [0.0, 0.0])
    out = scaling.transform(np.array([[100.0, 100.0]]), params)
    np.testing.assert_array_equal(out, [[0.0, 0.0]])


def test_train_matrix_spans_unit_interval():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(40, 6)) * rng.uniform(0.5, 10, 6) + rng.normal(size=6)
    store = store_from_matrix(x)
    params = scaling.fit(store)
    out = scaling.transform(store.features, params)
    np.testing.assert_allclose(out.min(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.max(axis=0), 1.0, atol=1e-12)


def test_median_vector_maps_to_robust_zero():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(31, 4))
    params = scaling.fit(store_from_matrix(x))
    out = scaling.transform(params.median, params)
    span = params.post_max - params.post_min
    expected = np.clip((0.0 - params.post_min) / span, 0.0, 1.0)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_below_train_min_clips_to_zero():
    x = np.arange(20, dtype=np.float64)[:, None]
    params = scaling.fit(store_from_matrix(x))
    assert scaling.transform(np.array([-100.0]), params)[0] == 0.0
    assert scaling.transform(np.array([1e9]), params)[0] == 1.0


def test_monotone_per_feature():
    rng = np.random.default_rng(8)
    params = scaling.fit(store_from_matrix(rng.normal(size=(25, 3))))
    probes = np.sort(rng.normal(size=50) * 3)
    for j in range(3):
        x = np.tile(params.median, (50, 1))
        x[:, j] = probes
        out = scaling.transform(x, params)[:, j]
        assert np.all(np.diff(out) >= 0)


def test_robust_stage_median_zero_invariant():
    rng = np.random.default_rng(9)
    for trial in range(10):
        store = store_from_matrix(rng.normal(size=(rng.integers(5, 60), rng.integers(1, 8))))
        params = scaling.fit(store)
        robust = (store.features.astype(np.float64) - params.median) / params.iqr_scale
        med = np.median(robust, axis=0)
        np.testing.assert_allclose(med, 0.0, atol=1e-9)


def test_errors():
    with pytest.raises(DataError):
        scaling.fit(store_from_matrix(np.zeros((0, 3)), labels=[]))
    with pytest.raises(DataError):
        scaling.fit(make_store(n=4, labels=[1, 0, -1, 1]))
    params = scaling.fit(store_from_matrix(np.ones((4, 2)), labels=[0, 1, 0, 1]))
    with pytest.raises(DimensionMismatchError):
        scaling.transform(np.ones((2, 3)), params)


def test_json_round_trip(tmp_path):
    params = scaling.fit(make_store(n=8, d=3))
    path = tmp_path / "scaler.json"
    params.save(path)
    again = scaling.ScalerParams.load(path)
    np.testing.assert_array_equal(params.median, again.median)
    np.testing.assert_array_equal(params.iqr_scale, again.iqr_scale)
    np.testing.assert_array_equal(params.post_min, again.post_min)
    np.testing.assert_array_equal(params.post_max, again.post_max)
    assert params.fitted_on == again.fitted_on


def test_double_transform_not_identity():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(30, 2)) * 10
    params = scaling.fit(store_from_matrix(x))
    once = scaling.transform(x, params)
    twice = scaling.transform(once, params)
    assert not np.allclose(once, twice)
