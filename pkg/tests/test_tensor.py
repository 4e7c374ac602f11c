import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbcreid.tensor import DimensionError, OracleError, as_tensor3, finite_diff_grad, relative_error


def test_finite_diff_quadratic():
    g = finite_diff_grad(lambda x: np.sum(x**2), [1.0, 2.0], 1e-5)
    np.testing.assert_allclose(g, [2.0, 4.0], atol=1e-8)


def test_finite_diff_linear():
    g = finite_diff_grad(lambda x: x[0], [7.0], 1e-4)
    np.testing.assert_allclose(g, [1.0], atol=1e-10)


def test_finite_diff_product():
    g = finite_diff_grad(lambda x: x[0] * x[1], [3.0, 5.0], 1e-5)
    np.testing.assert_allclose(g, [5.0, 3.0], atol=1e-8)


def test_finite_diff_reports_nonfinite_index():
    with pytest.raises(OracleError) as err:
        finite_diff_grad(lambda x: np.inf if x[1] < 0.5 else 0.0, [1.0, 0.5], 1e-3)
    assert err.value.index == 1


def test_finite_diff_rejects_bad_eps():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, [1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_finite_diff_matches_quadratic_forms(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    x = rng.standard_normal(n)
    g = finite_diff_grad(lambda v: v @ A @ v + b @ v + 3.0, x, 1e-5)
    np.testing.assert_allclose(g, (A + A.T) @ x + b, atol=1e-7)


def test_relative_error_examples():
    assert relative_error([1, 2, 3], [1, 2, 3]) == 0.0
    assert relative_error([0, 0], [0, 0]) == 0.0
    assert abs(relative_error([1, 0], [0, 1]) - math.sqrt(2)) < 1e-12


def test_relative_error_length_mismatch():
    with pytest.raises(DimensionError):
        relative_error([1, 2], [1, 2, 3])


def test_tensor3_layout_is_row_major():
    H, W, C = 2, 3, 4
    F = as_tensor3(np.arange(H * W * C), H, W, C)
    for p in range(H):
        for q in range(W):
            for c in range(C):
                assert F[p, q, c] == (p * W + q) * C + c


def test_tensor3_length_checked():
    with pytest.raises(DimensionError):
        as_tensor3([1.0, 2.0, 3.0], 1, 2, 2)
