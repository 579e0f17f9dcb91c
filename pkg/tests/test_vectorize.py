import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from malforest.pe import FEATURE_DIM, GROUP_DIMS, GROUP_OFFSETS, vectorize

import pe_stub


def test_group_dims_sum_to_feature_dim():
    assert sum(d for _, d in GROUP_DIMS) == FEATURE_DIM == 2381
    # offsets are contiguous and ordered
    running = 0
    for name, dim in GROUP_DIMS:
        assert GROUP_OFFSETS[name] == (running, dim)
        running += dim


def test_empty_input_defined():
    fv = vectorize(b"")
    assert fv.values.shape == (FEATURE_DIM,)
    assert np.isfinite(fv.values).all()
    np.testing.assert_array_equal(fv.values, vectorize(b"").values)


def test_stub_groups_populated():
    fv = vectorize(pe_stub.build_stub())
    assert fv.group("header").any()
    assert fv.group("sections").any()
    # stub exports nothing and imports nothing
    assert not fv.group("exports").any()
    assert not fv.group("imports").any()
    assert not fv.group("data_directories").any()
    # general block: size field plus sizeof_image
    assert fv.group("general")[0] == 512.0
    assert fv.group("general")[1] == pe_stub.SIZEOF_IMAGE


def test_parse_failure_zeroes_structured_groups():
    fv = vectorize(b"MZ" + bytes(500))  # bad PE offset -> structured groups zero
    for name in ("header", "sections", "imports", "exports", "data_directories"):
        assert not fv.group(name).any(), name
    assert fv.group("general")[0] == 502.0
    assert not fv.group("general")[1:].any()
    assert fv.group("byte_histogram").any()


def test_determinism_bit_identical():
    rng = np.random.default_rng(3)
    data = rng.integers(0, 256, 4096, dtype=np.uint8).tobytes()
    a = vectorize(data).values
    b = vectorize(data).values
    assert a.tobytes() == b.tobytes()


@settings(max_examples=60, deadline=None)
@given(st.binary(max_size=2048))
def test_totality_property(data):
    fv = vectorize(data)
    assert fv.values.shape == (FEATURE_DIM,)
    assert np.isfinite(fv.values).all()


def test_truncated_stub_still_vectorizes():
    fv = vectorize(pe_stub.build_truncated_stub())
    assert fv.values.shape == (FEATURE_DIM,)
    assert np.isfinite(fv.values).all()
    assert not fv.group("header").any()
