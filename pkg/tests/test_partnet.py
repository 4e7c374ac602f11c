import numpy as np
import pytest

from wbcreid.partnet import PartNetParams, generate_masks, init_partnet, partnet_backward, sigmoid
from wbcreid.tensor import DimensionError, finite_diff_grad, relative_error


def params(w, b):
    return PartNetParams(np.atleast_2d(np.asarray(w, dtype=float)), np.atleast_1d(np.asarray(b, dtype=float)))


def test_zero_weights_give_half(rng):
    M = generate_masks(rng.standard_normal((3, 4, 5)), params(np.zeros(5), 0.0))
    np.testing.assert_array_equal(M, np.full((1, 3, 4), 0.5))


def test_saturated_bias(rng):
    M = generate_masks(rng.standard_normal((3, 4, 5)), params(np.zeros(5), 50.0))
    assert np.abs(M - 1.0).max() < 1e-9


def test_zero_feature_location():
    F = np.array([[[0.0], [2.0]]])
    M = generate_masks(F, params([1.0], 0.0))
    assert M[0, 0, 0] == 0.5


def test_channel_mismatch():
    with pytest.raises(DimensionError):
        generate_masks(np.ones((2, 2, 3)), params(np.ones(4), 0.0))


def test_sigmoid_extremes_finite():
    s = sigmoid(np.array([-800.0, -30.0, 0.0, 30.0, 800.0]))
    assert np.all(np.isfinite(s))
    assert s[2] == 0.5


@pytest.mark.parametrize("seed", range(10))
def test_masks_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((4, 4, 6))
    M = generate_masks(F, init_partnet(6, 3, rng))
    assert M.shape == (3, 4, 4)
    assert np.all(M > 0.0) and np.all(M < 1.0)


def test_branch_independence(rng):
    F = rng.standard_normal((3, 3, 4))
    p = init_partnet(4, 3, rng)
    base = generate_masks(F, p)
    w = p.weight.copy()
    b = p.bias.copy()
    w[1] += rng.standard_normal(4)
    b[1] += 0.7
    moved = generate_masks(F, PartNetParams(w, b))
    np.testing.assert_array_equal(moved[0], base[0])
    np.testing.assert_array_equal(moved[2], base[2])
    assert np.any(moved[1] != base[1])


def test_backward_zero_upstream(rng):
    F = rng.standard_normal((3, 3, 4))
    dF, dp = partnet_backward(F, init_partnet(4, 2, rng), np.zeros((2, 3, 3)))
    assert not dF.any() and not dp.weight.any() and not dp.bias.any()


def test_backward_sigmoid_slope_at_zero():
    _, dp = partnet_backward(np.zeros((1, 1, 2)), params(np.zeros(2), 0.0), np.ones((1, 1, 1)))
    assert dp.bias[0] == 0.25


@pytest.mark.parametrize("seed", range(20))
def test_backward_finite_differences(seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((3, 3, 4))
    p = PartNetParams(rng.standard_normal((2, 4)), rng.standard_normal(2))
    G = rng.standard_normal((2, 3, 3))
    dF, dp = partnet_backward(F, p, G)

    def f(x):
        q = PartNetParams(x[36:44].reshape(2, 4), x[44:])
        return np.sum(generate_masks(x[:36].reshape(F.shape), q) * G)

    num = finite_diff_grad(f, np.concatenate([F.ravel(), p.weight.ravel(), p.bias]))
    assert relative_error(np.concatenate([dF.ravel(), dp.weight.ravel(), dp.bias]), num) < 1e-6
