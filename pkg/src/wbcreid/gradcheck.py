"""Certification of every hand-derived backward pass against central differences."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import aggregation as agg
from .loss import LossConfig, triplet_hinge, triplet_hinge_backward
from .model import VARIANTS, ModelConfig, backward, forward_batch, init_model
from .partnet import PartNetParams, generate_masks, partnet_backward, sigmoid
from .tensor import finite_diff_grad, relative_error

TOLERANCE = 1e-5
EPS = 1e-5


@dataclass(frozen=True)
class Sizes:
    side: int = 4  # feature map H = W
    channels: int = 4
    parts: int = 2
    embed_dim: int = 3


@dataclass
class CheckResult:
    op: str
    max_error: float
    instances: int

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _mask(rng, shape):
    return sigmoid(rng.standard_normal(shape))


def check_wbc(rng, s: Sizes, corrupt=1.0) -> float:
    M = _mask(rng, (s.side, s.side))
    F = rng.standard_normal((s.side, s.side, s.channels))
    G = rng.standard_normal((s.channels, s.channels))
    dM, dF = agg.wbc_backward(M, F, G)
    an = np.concatenate([dM.ravel(), dF.ravel()]) * corrupt
    n = M.size

    def f(x):
        return np.sum(agg.weighted_bilinear_code(x[:n].reshape(M.shape), x[n:].reshape(F.shape)) * G)

    return relative_error(an, finite_diff_grad(f, np.concatenate([M.ravel(), F.ravel()]), EPS))


def check_signed_sqrt(rng, s: Sizes, corrupt=1.0) -> float:
    n = s.channels * s.channels
    v = rng.choice([-1.0, 1.0], size=n) * rng.uniform(0.5, 2.0, size=n)
    g = rng.standard_normal(n)
    an = agg.signed_sqrt_backward(v, g) * corrupt
    return relative_error(an, finite_diff_grad(lambda x: np.sum(agg.signed_sqrt(x) * g), v, EPS))


def check_embed(rng, s: Sizes, corrupt=1.0) -> float:
    k = s.channels * s.channels
    params = agg.init_embedding(k, s.embed_dim, rng)
    v = rng.standard_normal(k)
    g = rng.standard_normal(s.embed_dim)
    dV, dW = agg.embed_backward(v, params, g)
    an = np.concatenate([dV, dW.ravel()]) * corrupt

    def f(x):
        return np.sum(agg.embed(x[:k], agg.EmbeddingParams(x[k:].reshape(params.weight.shape))) * g)

    return relative_error(an, finite_diff_grad(f, np.concatenate([v, params.weight.ravel()]), EPS))


def check_partnet(rng, s: Sizes, corrupt=1.0) -> float:
    F = rng.standard_normal((s.side, s.side, s.channels))
    pn = PartNetParams(rng.standard_normal((s.parts, s.channels)), rng.standard_normal(s.parts))
    G = rng.standard_normal((s.parts, s.side, s.side))
    dF, dp = partnet_backward(F, pn, G)
    an = np.concatenate([dF.ravel(), dp.weight.ravel(), dp.bias]) * corrupt
    nF, nW = F.size, pn.weight.size

    def f(x):
        p = PartNetParams(x[nF : nF + nW].reshape(pn.weight.shape), x[nF + nW :])
        return np.sum(generate_masks(x[:nF].reshape(F.shape), p) * G)

    x0 = np.concatenate([F.ravel(), pn.weight.ravel(), pn.bias])
    return relative_error(an, finite_diff_grad(f, x0, EPS))


def check_triplet(rng, s: Sizes, corrupt=1.0) -> float:
    cfg = LossConfig()
    d = s.parts * s.embed_dim
    while True:
        fi, fj, fk = (agg.l2_normalize(rng.standard_normal(d)) for _ in range(3))
        arg = np.linalg.norm(fi - fj) - np.linalg.norm(fi - fk) + cfg.margin
        if arg > 1e-3:
            break
    an = np.concatenate(triplet_hinge_backward(fi, fj, fk, cfg, 1.0)) * corrupt

    def f(x):
        return triplet_hinge(x[:d], x[d : 2 * d], x[2 * d :], cfg)

    return relative_error(an, finite_diff_grad(f, np.concatenate([fi, fj, fk]), EPS))


# central differences are only valid away from the ReLU kink and the
# signed-sqrt singularity at zero
MIN_PREACTIVATION = 1e-3
MIN_CODE_ENTRY = 5e-2


def _smooth(cache) -> bool:
    v = cache.values
    if np.abs(v["Z1"]).min() < MIN_PREACTIVATION:
        return False
    return "raw" not in v or np.abs(v["raw"]).min() >= MIN_CODE_ENTRY


def _model_check(variant):
    def check(rng, s: Sizes, corrupt=1.0) -> float:
        while True:
            cfg = ModelConfig(
                variant=variant,
                parts=s.parts,
                embed_dim=s.embed_dim,
                channels=s.channels,
                hidden_channels=s.channels,
                seed=int(rng.integers(2**31)),
            )
            params = init_model(cfg)
            params = params.from_flat(params.flat() + 0.1 * rng.standard_normal(params.flat().size))
            X = rng.standard_normal((2, 2 * s.side, 2 * s.side, cfg.in_channels))
            G = rng.standard_normal((2, cfg.output_dim))
            _, cache = forward_batch(X, params)
            if _smooth(cache):
                break
        grads = backward(cache, G)
        an = np.concatenate([grads[k].ravel() for k in params.tensors]) * corrupt

        def f(x):
            return np.sum(forward_batch(X, params.from_flat(x))[0] * G)

        return relative_error(an, finite_diff_grad(f, params.flat(), EPS))

    return check


CHECKS: dict[str, Callable] = {
    "wbc_backward": check_wbc,
    "signed_sqrt_backward": check_signed_sqrt,
    "embed_backward": check_embed,
    "partnet_backward": check_partnet,
    "triplet_hinge_backward": check_triplet,
    **{f"model_backward[{v}]": _model_check(v) for v in VARIANTS},
}


def run_gradchecks(
    seed: int = 0, sizes: Sizes = Sizes(), instances: int = 20, corrupt: Optional[str] = None
) -> list[CheckResult]:
    """Run every check on ``instances`` random draws.

    ``corrupt`` names one op whose analytical gradient is scaled by 1.01, as a
    negative control.
    """
    if corrupt is not None and corrupt not in CHECKS:
        raise KeyError(f"unknown op {corrupt!r}; choose from {list(CHECKS)}")
    results = []
    for n, (name, check) in enumerate(CHECKS.items()):
        rng = np.random.default_rng([seed, n])
        scale = 1.01 if name == corrupt else 1.0
        errs = [check(rng, sizes, scale) for _ in range(instances)]
        results.append(CheckResult(name, max(errs), instances))
    return results
