"""Mini-batch SGD with momentum, weight decay and a step-halving learning rate."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .dataio import ConfigurationError
from .loss import LossConfig, batch_loss
from .model import ModelConfig, ModelParams, backward, forward_batch, init_model
from .tensor import DimensionError


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class SGDConfig:
    """Optimizer settings. Defaults are the full-scale values; see :meth:`desk`."""

    initial_lr: float = 0.008
    halve_period: int = 4000
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 300
    images_per_identity: int = 4
    max_iters: int = 20000
    seed: int = 0

    def __post_init__(self):
        if not self.initial_lr > 0:
            raise ConfigurationError("initial_lr must be positive")
        if self.halve_period < 1:
            raise ConfigurationError("halve_period must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be non-negative")
        if self.max_iters < 0:
            raise ConfigurationError("max_iters must be non-negative")
        if self.images_per_identity < 1 or self.batch_size % self.images_per_identity:
            raise ConfigurationError(
                f"batch_size {self.batch_size} is not a multiple of images_per_identity {self.images_per_identity}"
            )

    @classmethod
    def desk(cls, **overrides) -> "SGDConfig":
        base = dict(batch_size=32, images_per_identity=4, halve_period=200, max_iters=500)
        base.update(overrides)
        return cls(**base)

    @property
    def identities_per_batch(self) -> int:
        return self.batch_size // self.images_per_identity


@dataclass
class TrainState:
    iteration: int
    velocity: dict
    rng: np.random.Generator


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)  # (iter, lr, loss, active_frac)

    def append(self, it, lr, loss, active):
        self.rows.append((it, lr, loss, active))

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "lr", "loss", "active_frac"])
        for it, lr, loss, active in self.rows:
            w.writerow([it, repr(lr), repr(loss), repr(active)])
        return buf.getvalue()


def lr_schedule(iteration: int, cfg: SGDConfig) -> float:
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return cfg.initial_lr / 2 ** (iteration // cfg.halve_period)


def init_state(params: ModelParams, cfg: SGDConfig) -> TrainState:
    return TrainState(0, {k: np.zeros_like(v) for k, v in params.tensors.items()}, np.random.default_rng(cfg.seed))


def sgd_step(params: ModelParams, grads: dict, state: TrainState, cfg: SGDConfig):
    """Classical momentum: ``v <- mu v - lr (g + wd theta)``, ``theta <- theta + v``."""
    lr = lr_schedule(state.iteration, cfg)
    new_t, new_v = {}, {}
    for name, theta in params.tensors.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        v = cfg.momentum * state.velocity[name] - lr * (g + cfg.weight_decay * theta)
        new_v[name] = v
        new_t[name] = theta + v
    return params.replace(new_t), TrainState(state.iteration + 1, new_v, state.rng)


def make_batches(labels, cfg: SGDConfig, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """One epoch of P x K batches (P identities, K images each).

    Each identity's images are shuffled and cut into groups of K without
    replacement; leftovers smaller than K are dropped for the epoch.
    """
    labels = np.asarray(labels)
    ids = np.unique(labels)
    K, P = cfg.images_per_identity, cfg.identities_per_batch
    if len(ids) < 2:
        raise ConfigurationError("need at least two identities to form triplets")
    if K < 2:
        raise ConfigurationError("need at least two images per identity in a batch")
    groups = {}
    for ident in ids:
        idx = rng.permutation(np.flatnonzero(labels == ident))
        chunks = [idx[s : s + K] for s in range(0, len(idx) - K + 1, K)]
        if chunks:
            groups[int(ident)] = chunks
    if len(groups) < P or P < 2:
        raise ConfigurationError(
            f"batch needs {P} identities with >= {K} images each; dataset has {len(groups)}"
        )
    while True:
        ready = sorted(groups)
        if len(ready) < P:
            return
        chosen = rng.choice(len(ready), size=P, replace=False)
        batch = []
        for c in chosen:
            ident = ready[c]
            batch.append(groups[ident].pop())
            if not groups[ident]:
                del groups[ident]
        yield np.concatenate(batch)


def _check_finite(loss, params: ModelParams, grads: dict, it: int) -> None:
    for name, value in params.tensors.items():
        if not np.all(np.isfinite(value)):
            raise TrainingDivergedError(f"non-finite values in parameter block {name!r} at iteration {it}")
    for name in params.tensors:
        if not np.all(np.isfinite(grads[name])):
            raise TrainingDivergedError(f"non-finite gradient in parameter block {name!r} at iteration {it}")
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss} at iteration {it}")


def train(
    images,
    labels,
    model_cfg: ModelConfig,
    sgd_cfg: SGDConfig,
    loss_cfg: LossConfig = LossConfig(),
    params: Optional[ModelParams] = None,
):
    """Train from initialisation (or ``params``); returns ``(params, TrainLog)``."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if params is None:
        params = init_model(model_cfg)
    state = init_state(params, sgd_cfg)
    log = TrainLog()
    batches = iter(())
    while state.iteration < sgd_cfg.max_iters:
        idx = next(batches, None)
        if idx is None:
            batches = make_batches(labels, sgd_cfg, state.rng)
            continue
        U, cache = forward_batch(images[idx], params)
        loss, dU, active = batch_loss(U, labels[idx], loss_cfg, with_stats=True)
        grads = backward(cache, dU)
        _check_finite(loss, params, grads, state.iteration)
        log.append(state.iteration, lr_schedule(state.iteration, sgd_cfg), loss, active)
        params, state = sgd_step(params, grads, state, sgd_cfg)
    return params, log
