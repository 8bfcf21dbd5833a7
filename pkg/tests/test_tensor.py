import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dendconv.errors import DimensionError
from dendconv.tensor import PatchMatrix, extract_patches, fold_patches, multiplicity_map

from oracles import coverage_counts, sliding_patches


def test_single_full_cover_patch():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    p = extract_patches(x, k=2)
    np.testing.assert_array_equal(p.data, [[1, 2, 3, 4]])


def test_identity_patches():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    p = extract_patches(x, k=1)
    np.testing.assert_array_equal(p.data, [[1], [2], [3], [4]])


def test_padded_corner_row():
    p = extract_patches(np.ones((1, 1, 3, 3)), k=3, stride=1, padding=1)
    assert p.data.shape == (9, 9)
    assert p.data[0].sum() == 4
    assert np.count_nonzero(p.data[0] == 0) == 5


def test_fold_identity_k1():
    x = np.random.default_rng(0).uniform(-1, 1, (2, 3, 4, 5))
    np.testing.assert_array_equal(fold_patches(extract_patches(x, 1)), x)


def test_fold_multiplicity_padded():
    out = fold_patches(extract_patches(np.ones((1, 1, 2, 2)), k=2, stride=1, padding=1))
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 4.0))


def test_fold_zero():
    geom = extract_patches(np.ones((1, 2, 4, 4)), 3, 1, 1).geometry
    out = fold_patches(PatchMatrix(np.zeros((geom.rows, geom.cols)), geom))
    np.testing.assert_array_equal(out, np.zeros((1, 2, 4, 4)))


@pytest.mark.parametrize(
    "shape,k,pad,axis",
    [((1, 1, 2, 5), 3, 0, "height"), ((1, 1, 5, 2), 3, 0, "width"), ((1, 1, 1, 1), 4, 1, "height")],
)
def test_kernel_too_large_names_axis(shape, k, pad, axis):
    with pytest.raises(DimensionError, match=axis):
        extract_patches(np.zeros(shape), k, 1, pad)


def test_rejects_non_4d():
    with pytest.raises(DimensionError, match="4 axes"):
        extract_patches(np.zeros((3, 3)), 1)


def test_inconsistent_geometry():
    geom = extract_patches(np.ones((1, 1, 3, 3)), 2).geometry
    with pytest.raises(DimensionError):
        PatchMatrix(np.zeros((geom.rows + 1, geom.cols)), geom)


shapes = st.tuples(
    st.integers(1, 3), st.integers(1, 3), st.integers(1, 8), st.integers(1, 8),
    st.integers(1, 3), st.integers(1, 3), st.integers(0, 2),
).filter(lambda t: t[4] <= t[2] + 2 * t[6] and t[4] <= t[3] + 2 * t[6])


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1))
def test_extract_matches_sliding_window_oracle(dims, seed):
    n, c, h, w, k, stride, pad = dims
    x = np.random.default_rng(seed).uniform(-1, 1, (n, c, h, w))
    expected, ho, wo = sliding_patches(x, k, stride, pad)
    p = extract_patches(x, k, stride, pad)
    assert (p.geometry.h_out, p.geometry.w_out) == (ho, wo)
    np.testing.assert_array_equal(p.data, expected)


@settings(max_examples=60, deadline=None)
@given(shapes, st.integers(0, 2**32 - 1))
def test_fold_extract_is_multiplicity_scaling(dims, seed):
    n, c, h, w, k, stride, pad = dims
    x = np.random.default_rng(seed).uniform(-1, 1, (n, c, h, w))
    p = extract_patches(x, k, stride, pad)
    counts = coverage_counts(x.shape, k, stride, pad)
    np.testing.assert_array_equal(multiplicity_map(p.geometry), counts)
    np.testing.assert_allclose(fold_patches(p), x * counts, rtol=0, atol=1e-12)
