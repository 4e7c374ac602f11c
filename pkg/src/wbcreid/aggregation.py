"""First- and second-order pooling of convolutional feature maps.

All functions accept arbitrary leading batch axes: a feature map is
``(..., H, W, C)``, a mask ``(..., H, W)`` and a bilinear code ``(..., C, C)``.
Backward functions return gradients with the shapes of the forward inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tensor import DimensionError, check_tensor3

SQRT_DELTA = 1e-12
NORM_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingParams:
    """Bias-free linear map from ``in_dim`` to ``weight.shape[0]`` outputs."""

    weight: np.ndarray  # (D, in_dim)

    @property
    def output_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class FinalFeature:
    vector: np.ndarray
    part_count: int
    part_dim: int

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.vector, dtype=dtype)

    def __len__(self):
        return self.vector.shape[0]


def init_embedding(in_dim: int, out_dim: int, rng: np.random.Generator) -> EmbeddingParams:
    a = np.sqrt(6.0 / (in_dim + out_dim))
    return EmbeddingParams(rng.uniform(-a, a, size=(out_dim, in_dim)))


def _flat_locations(F: np.ndarray) -> np.ndarray:
    return F.reshape(F.shape[:-3] + (F.shape[-3] * F.shape[-2], F.shape[-1]))


def _check_mask(M: np.ndarray, F: np.ndarray) -> None:
    if M.shape[-2:] != F.shape[-3:-1]:
        raise DimensionError(f"mask shape {M.shape} does not match feature map {F.shape}")


def gap(F) -> np.ndarray:
    F = check_tensor3(F)
    H, W = F.shape[-3:-1]
    return _flat_locations(F).sum(axis=-2) / (H * W)


def gap_backward(F, dOut) -> np.ndarray:
    F = check_tensor3(F)
    H, W = F.shape[-3:-1]
    dOut = np.asarray(dOut)
    return np.broadcast_to(dOut[..., None, None, :] / (H * W), F.shape).copy()


def masked_average(M, F) -> np.ndarray:
    """Mask-weighted mean ``sum(M * F) / sum(M)`` over locations."""
    F = check_tensor3(F)
    M = np.asarray(M)
    _check_mask(M, F)
    mass = M.sum(axis=(-2, -1))
    return (M[..., None] * F).sum(axis=(-3, -2)) / mass[..., None]


def masked_average_backward(M, F, dOut):
    F = check_tensor3(F)
    M = np.asarray(M)
    _check_mask(M, F)
    mass = M.sum(axis=(-2, -1))
    avg = (M[..., None] * F).sum(axis=(-3, -2)) / mass[..., None]
    g = dOut / mass[..., None]
    dF = M[..., None] * g[..., None, None, :]
    dM = ((F - avg[..., None, None, :]) * g[..., None, None, :]).sum(axis=-1)
    return dM, dF


def bilinear_code(F) -> np.ndarray:
    """Sum over locations of the outer product of each channel vector with itself."""
    X = _flat_locations(check_tensor3(F))
    return np.swapaxes(X, -1, -2) @ X


def bilinear_backward(F, dB) -> np.ndarray:
    F = check_tensor3(F)
    dB = np.asarray(dB)
    S = dB + np.swapaxes(dB, -1, -2)
    FS = _flat_locations(F) @ S
    return FS.reshape(FS.shape[:-2] + F.shape[-3:])


def weighted_bilinear_code(M, F) -> np.ndarray:
    """Bilinear code of the mask-scaled map: each outer product is weighted by M**2."""
    F = check_tensor3(F)
    M = np.asarray(M)
    _check_mask(M, F)
    return bilinear_code(M[..., None] * F)


def wbc_backward(M, F, dB):
    F = check_tensor3(F)
    M = np.asarray(M)
    _check_mask(M, F)
    dB = np.asarray(dB)
    C = F.shape[-1]
    if dB.shape[-2:] != (C, C):
        raise DimensionError(f"upstream gradient shape {dB.shape} does not match C={C}")
    S = dB + np.swapaxes(dB, -1, -2)
    FS = _flat_locations(F) @ S
    FS = FS.reshape(FS.shape[:-2] + F.shape[-3:])
    dF = (M * M)[..., None] * FS
    dM = M * (FS * F).sum(axis=-1)
    return dM, dF


def signed_sqrt(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.sqrt(np.abs(v))


def signed_sqrt_backward(v, dOut) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.asarray(dOut) / (2.0 * np.sqrt(np.abs(v) + SQRT_DELTA))


def embed(v, params: EmbeddingParams) -> np.ndarray:
    v = np.asarray(v)
    if v.shape[-1] != params.input_dim:
        raise DimensionError(f"embedding expects length {params.input_dim}, got {v.shape[-1]}")
    return v @ params.weight.T


def embed_backward(v, params: EmbeddingParams, dOut):
    v = np.asarray(v)
    dOut = np.asarray(dOut)
    if v.shape[-1] != params.input_dim or dOut.shape[-1] != params.output_dim:
        raise DimensionError(
            f"embedding {params.weight.shape} incompatible with input {v.shape} / gradient {dOut.shape}"
        )
    dV = dOut @ params.weight
    dWeight = dOut.reshape(-1, params.output_dim).T @ v.reshape(-1, params.input_dim)
    return dV, dWeight


def flatten_code(B) -> np.ndarray:
    B = np.asarray(B)
    return B.reshape(B.shape[:-2] + (B.shape[-2] * B.shape[-1],))


def encode_part(M, F, params: EmbeddingParams) -> np.ndarray:
    return embed(signed_sqrt(flatten_code(weighted_bilinear_code(M, F))), params)


def l2_normalize(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    return z / np.maximum(norm, NORM_EPS)


def l2_normalize_backward(z, dOut) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    denom = np.maximum(norm, NORM_EPS)
    u = z / denom
    radial = np.where(norm > NORM_EPS, (u * dOut).sum(axis=-1, keepdims=True), 0.0)
    return (dOut - u * radial) / denom


def concat_normalize(parts: Sequence) -> FinalFeature:
    if len(parts) < 1:
        raise DimensionError("need at least one part")
    parts = [np.asarray(p, dtype=np.float64).ravel() for p in parts]
    dim = parts[0].size
    if any(p.size != dim for p in parts):
        raise DimensionError(f"unequal part lengths {[p.size for p in parts]}")
    return FinalFeature(l2_normalize(np.concatenate(parts)), len(parts), dim)
