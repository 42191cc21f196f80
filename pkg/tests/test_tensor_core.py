import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from latentdistill.errors import ShapeError
from latentdistill.tensor_core import fold, mode_product, multi_mode_product, unfold


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_vector_unfolding_is_column():
    np.testing.assert_array_equal(unfold([1.0, 2.0, 3.0], 0), [[1.0], [2.0], [3.0]])


def test_matrix_mode0_unfolding_is_matrix():
    np.testing.assert_array_equal(unfold([[1, 2], [3, 4]], 0), [[1, 2], [3, 4]])


def test_unfold_ordering_rightmost_fastest():
    t = np.arange(24.0).reshape(2, 3, 4)
    u = unfold(t, 1)
    # column index runs over (i0, i2) with i2 fastest
    for j in range(3):
        for i0 in range(2):
            for i2 in range(4):
                assert u[j, i0 * 4 + i2] == t[i0, j, i2]


def test_fold_vector():
    np.testing.assert_array_equal(fold([[1.0], [2.0], [3.0]], 0, (3,)), [1.0, 2.0, 3.0])


def test_round_trip_random_exact():
    rng = np.random.default_rng(0)
    for _ in range(100):
        order = rng.integers(1, 5)
        shape = tuple(rng.integers(1, 6, size=order))
        t = rng.standard_normal(shape)
        for m in range(order):
            assert np.array_equal(fold(unfold(t, m), m, shape), t)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(*[st.integers(1, 4)] * 3), elements=st.floats(-1e6, 1e6)))
def test_round_trip_property(t):
    for m in range(3):
        assert np.array_equal(fold(unfold(t, m), m, t.shape), t)


def test_unfold_bad_mode():
    with pytest.raises(IndexError):
        unfold(np.zeros((2, 2)), 2)
    with pytest.raises(IndexError):
        unfold(np.zeros((2, 2)), -1)


def test_fold_shape_mismatch():
    with pytest.raises(ShapeError):
        fold(np.zeros((3, 4)), 0, (3, 5))


def test_identity_mode_product_exact():
    t = np.random.default_rng(1).standard_normal((3, 4, 5))
    for m, d in enumerate(t.shape):
        assert np.array_equal(mode_product(t, np.eye(d), m), t)


def test_order2_mode0_is_matmul():
    rng = np.random.default_rng(2)
    a, t = rng.standard_normal((6, 3)), rng.standard_normal((3, 4))
    np.testing.assert_allclose(mode_product(t, a, 0), a @ t, rtol=1e-14)
    b = rng.standard_normal((5, 4))
    np.testing.assert_allclose(mode_product(t, b, 1), t @ b.T, rtol=1e-14)


def test_distinct_modes_commute():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = rng.standard_normal((3, 4, 5))
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((6, 4))
        left = mode_product(mode_product(t, a, 0), b, 1)
        right = mode_product(mode_product(t, b, 1), a, 0)
        assert rel(left, right) <= 1e-12


def test_unfold_of_product_is_matrix_product():
    rng = np.random.default_rng(4)
    t = rng.standard_normal((3, 4, 5))
    for m, d in enumerate(t.shape):
        a = rng.standard_normal((7, d))
        assert rel(unfold(mode_product(t, a, m), m), a @ unfold(t, m)) <= 1e-12


def test_mode_product_against_einsum():
    rng = np.random.default_rng(5)
    t = rng.standard_normal((3, 4, 5))
    a = rng.standard_normal((2, 4))
    np.testing.assert_allclose(mode_product(t, a, 1), np.einsum("ijk,bj->ibk", t, a), rtol=1e-12)


def test_mode_product_inner_mismatch():
    with pytest.raises(ShapeError):
        mode_product(np.zeros((3, 4)), np.zeros((2, 5)), 1)


def test_multi_mode_product_transpose():
    rng = np.random.default_rng(6)
    t = rng.standard_normal((3, 4))
    a, b = rng.standard_normal((3, 2)), rng.standard_normal((4, 3))
    np.testing.assert_allclose(multi_mode_product(t, [a, b], transpose=True), a.T @ t @ b, rtol=1e-12)
