"""Salient part masks: L independent 1x1 convolutions over channels, each
followed by a sigmoid."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError, check_tensor3


@dataclass(frozen=True)
class PartNetParams:
    weight: np.ndarray  # (L, C)
    bias: np.ndarray  # (L,)

    def __post_init__(self):
        w, b = np.asarray(self.weight), np.asarray(self.bias)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionError(f"part net weight {w.shape} and bias {b.shape} disagree")

    @property
    def branch_count(self) -> int:
        return self.weight.shape[0]


def init_partnet(channels: int, parts: int, rng: np.random.Generator) -> PartNetParams:
    a = 1.0 / np.sqrt(channels)
    return PartNetParams(rng.uniform(-a, a, size=(parts, channels)), np.zeros(parts))


def sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check(F, params: PartNetParams):
    F = check_tensor3(F)
    if F.shape[-1] != params.weight.shape[1]:
        raise DimensionError(f"part net expects {params.weight.shape[1]} channels, got {F.shape[-1]}")
    return F


def generate_masks(F, params: PartNetParams) -> np.ndarray:
    """Masks of shape ``(..., L, H, W)`` with values in (0, 1)."""
    F = _check(F, params)
    logits = F @ params.weight.T + params.bias  # (..., H, W, L)
    return np.moveaxis(sigmoid(logits), -1, -3)


def partnet_backward(F, params: PartNetParams, dMasks):
    """Returns ``(dF, PartNetParams-shaped gradient)`` for upstream ``(..., L, H, W)``."""
    F = _check(F, params)
    masks = generate_masks(F, params)
    dMasks = np.asarray(dMasks)
    if dMasks.shape != masks.shape:
        raise DimensionError(f"mask gradient shape {dMasks.shape} != {masks.shape}")
    dPre = np.moveaxis(dMasks * masks * (1.0 - masks), -3, -1)  # (..., H, W, L)
    dF = dPre @ params.weight
    L, C = params.weight.shape
    flatPre = dPre.reshape(-1, L)
    dW = flatPre.T @ F.reshape(-1, C)
    db = flatPre.sum(axis=0)
    return dF, PartNetParams(dW, db)
