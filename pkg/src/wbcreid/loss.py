"""Triplet ranking loss on final features."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .tensor import DimensionError

DIST_DELTA = 1e-12


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


@dataclass(frozen=True)
class LossConfig:
    margin: float = 0.2
    # exhaustive mining above this count is replaced by a seeded subsample
    max_triplets: Optional[int] = None
    mining_seed: int = 0

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"feature length mismatch: {a.shape} vs {b.shape}")
    return a, b


def euclid_dist(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def triplet_hinge(fi, fj, fk, cfg: LossConfig = LossConfig()) -> float:
    return max(0.0, euclid_dist(fi, fj) - euclid_dist(fi, fk) + cfg.margin)


def triplet_hinge_backward(fi, fj, fk, cfg: LossConfig = LossConfig(), dLoss: float = 1.0):
    fi, fj = _pair(fi, fj)
    fi, fk = _pair(fi, fk)
    d_ij = euclid_dist(fi, fj)
    d_ik = euclid_dist(fi, fk)
    if d_ij - d_ik + cfg.margin <= 0.0:
        z = np.zeros_like(fi)
        return z, z.copy(), z.copy()
    u_ij = (fi - fj) / (d_ij + DIST_DELTA)
    u_ik = (fi - fk) / (d_ik + DIST_DELTA)
    return dLoss * (u_ij - u_ik), -dLoss * u_ij, dLoss * u_ik


def mine_triplet_array(labels, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """All valid (anchor, positive, negative) index rows in lexicographic order."""
    y = np.asarray(labels)
    if y.size == 0:
        raise ValueError("empty batch")
    n = y.size
    same = y[:, None] == y[None, :]
    pos = same & ~np.eye(n, dtype=bool)
    valid = pos[:, :, None] & ~same[:, None, :]
    trip = np.argwhere(valid)
    if cfg.max_triplets is not None and len(trip) > cfg.max_triplets:
        rng = np.random.default_rng(cfg.mining_seed)
        keep = np.sort(rng.choice(len(trip), size=cfg.max_triplets, replace=False))
        trip = trip[keep]
    return trip


def mine_triplets(labels, cfg: LossConfig = LossConfig()) -> list[Triplet]:
    return [Triplet(int(i), int(j), int(k)) for i, j, k in mine_triplet_array(labels, cfg)]


def pairwise_distances(features: np.ndarray) -> np.ndarray:
    diff = features[:, None, :] - features[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def batch_loss(features: Sequence, labels, cfg: LossConfig = LossConfig(), with_stats: bool = False):
    """Mean triplet hinge over all mined triplets and its gradient.

    Returns ``(loss, dFeatures)``, plus the fraction of active triplets when
    ``with_stats`` is set.
    """
    X = np.asarray(np.stack([np.asarray(f, dtype=np.float64) for f in features]))
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise DimensionError(f"{X.shape[0]} features for {y.size} labels")
    trip = mine_triplet_array(y, cfg)
    dX = np.zeros_like(X)
    if len(trip) == 0:
        return (0.0, dX, 0.0) if with_stats else (0.0, dX)
    i, j, k = trip.T
    dist = pairwise_distances(X)
    hinge = np.maximum(dist[i, j] - dist[i, k] + cfg.margin, 0.0)
    T = len(trip)
    # shifted mean: exact when every term is equal
    loss = float(hinge[0] + np.sum(hinge - hinge[0]) / T)
    active = hinge > 0.0
    w = active / T
    G = np.zeros((X.shape[0], X.shape[0]))
    np.add.at(G, (i, j), w)
    np.add.at(G, (i, k), -w)
    A = G / (dist + DIST_DELTA)
    dX = (A.sum(axis=1)[:, None] * X - A @ X) + (A.sum(axis=0)[:, None] * X - A.T @ X)
    if with_stats:
        return loss, dX, float(active.mean())
    return loss, dX
