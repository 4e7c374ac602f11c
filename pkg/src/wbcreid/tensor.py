"""Array conventions and the finite-difference gradient oracle.

Feature maps are numpy arrays of shape ``(..., H, W, C)`` in C (row-major)
order, so the flat index of ``F[p, q, c]`` is ``(p * W + q) * C + c``.
Matrices are ``(rows, cols)`` arrays and vectors are 1-d arrays. Every
operation in the package is batched over leading axes.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

TINY = 1e-300


class DimensionError(ValueError):
    pass


class OracleError(ArithmeticError):
    """Raised when the finite-difference oracle sees a non-finite value."""

    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite function value {value!r} while perturbing index {index}")
        self.index = index


def as_tensor3(values, height: int, width: int, channels: int) -> np.ndarray:
    """Build an ``H x W x C`` feature map from a flat row-major sequence."""
    arr = np.asarray(values, dtype=np.float64)
    if min(height, width, channels) < 1:
        raise DimensionError(f"dimensions must be positive, got {(height, width, channels)}")
    if arr.size != height * width * channels:
        raise DimensionError(
            f"expected {height * width * channels} values for {height}x{width}x{channels}, got {arr.size}"
        )
    return arr.reshape(height, width, channels).copy()


def check_tensor3(F: np.ndarray) -> np.ndarray:
    F = np.asarray(F)
    if F.ndim < 3 or min(F.shape[-3:]) < 1:
        raise DimensionError(f"expected (..., H, W, C) feature map, got shape {F.shape}")
    return F


def frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.flags.writeable = False
    return arr


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector.

    Runs in double precision regardless of the dtype of ``x``.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.array(x, dtype=np.float64).ravel()
    g = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + eps
        fp = float(f(x.copy()))
        x[i] = orig - eps
        fm = float(f(x.copy()))
        x[i] = orig
        if not np.isfinite(fp):
            raise OracleError(i, fp)
        if not np.isfinite(fm):
            raise OracleError(i, fm)
        g[i] = (fp - fm) / (2.0 * eps)
    return g


def relative_error(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    num = np.linalg.norm(a - b)
    if num == 0.0:
        return 0.0
    return float(num / max(np.linalg.norm(a), np.linalg.norm(b), TINY))
