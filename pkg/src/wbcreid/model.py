"""End-to-end feature extractor: toy backbone, salient part masks, part
aggregation, embedding and l2 normalisation, for four pipeline variants.

Variants:

* ``GAP``       global average pooling, one embedding
* ``GAP_PART``  mask-weighted average pooling per part, one embedding per part
* ``BC``        bilinear code of the whole map, one embedding
* ``WBC_PART``  weighted bilinear code per part, one embedding per part
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import aggregation as agg
from .dataio import ConfigurationError, read_tensor, write_json, write_tensor
from .partnet import PartNetParams, generate_masks, init_partnet, partnet_backward
from .tensor import DimensionError

VARIANTS = ("GAP", "GAP_PART", "BC", "WBC_PART")
CHECKPOINT_NAME = "checkpoint.json"


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "WBC_PART"
    parts: int = 3
    embed_dim: int = 128
    channels: int = 16
    hidden_channels: int = 16
    in_channels: int = 3
    # False: inputs are already (H, W, channels) feature maps
    use_backbone: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; valid variants: {', '.join(VARIANTS)}")
        for name in ("parts", "embed_dim", "channels", "hidden_channels", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def part_based(self) -> bool:
        return self.variant in ("GAP_PART", "WBC_PART")

    @property
    def part_count(self) -> int:
        return self.parts if self.part_based else 1

    @property
    def output_dim(self) -> int:
        return self.part_count * self.embed_dim

    @property
    def code_dim(self) -> int:
        C = self.channels
        return C * C if self.variant in ("BC", "WBC_PART") else C


@dataclass(frozen=True)
class RasterSample:
    image: np.ndarray  # (h, w, c_in), or (H, W, C) with the backbone bypassed
    label: int = -1


@dataclass(frozen=True)
class ModelParams:
    config: ModelConfig
    tensors: dict

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def partnet(self) -> PartNetParams:
        return PartNetParams(self.tensors["partnet.weight"], self.tensors["partnet.bias"])

    def embedding(self, part: int) -> agg.EmbeddingParams:
        return agg.EmbeddingParams(self.tensors[f"embed.{part}.weight"])

    def replace(self, tensors: dict) -> "ModelParams":
        missing = set(self.tensors) ^ set(tensors)
        if missing:
            raise DimensionError(f"parameter sets differ: {sorted(missing)}")
        return ModelParams(self.config, {k: tensors[k] for k in self.tensors})

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def from_flat(self, x) -> "ModelParams":
        out, off = {}, 0
        for k, t in self.tensors.items():
            out[k] = np.asarray(x[off : off + t.size], dtype=np.float64).reshape(t.shape)
            off += t.size
        return ModelParams(self.config, out)


def _glorot(rng, shape, fan_in, fan_out):
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_model(cfg: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(cfg.seed)
    t = {}
    if cfg.use_backbone:
        cin, hid, C = cfg.in_channels, cfg.hidden_channels, cfg.channels
        t["backbone.conv1.weight"] = _glorot(rng, (3, 3, cin, hid), 9 * cin, hid)
        t["backbone.conv1.bias"] = np.zeros(hid)
        t["backbone.conv2.weight"] = _glorot(rng, (hid, C), hid, C)
        t["backbone.conv2.bias"] = np.zeros(C)
    if cfg.part_based:
        pn = init_partnet(cfg.channels, cfg.parts, rng)
        t["partnet.weight"], t["partnet.bias"] = pn.weight, pn.bias
    for part in range(cfg.part_count):
        t[f"embed.{part}.weight"] = agg.init_embedding(cfg.code_dim, cfg.embed_dim, rng).weight
    return ModelParams(cfg, t)


def _im2col(X: np.ndarray) -> np.ndarray:
    """3x3 windows at stride 2 with zero padding 1: (N, h, w, c) -> (N, H, W, 9c)."""
    N, h, w, c = X.shape
    H, W = (h - 1) // 2 + 1, (w - 1) // 2 + 1
    Xp = np.pad(X, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = [Xp[:, di : di + 2 * H - 1 : 2, dj : dj + 2 * W - 1 : 2, :] for di in range(3) for dj in range(3)]
    return np.concatenate(cols, axis=-1)


@dataclass
class ForwardCache:
    params: ModelParams
    values: dict = field(default_factory=dict)
    consumed: bool = False


def forward_batch(X, params: ModelParams):
    """Final features ``(N, output_dim)`` for a batch of images, plus the cache."""
    cfg = params.config
    t = params.tensors
    X = np.asarray(X, dtype=np.float64)
    v = {}
    if cfg.use_backbone:
        if X.ndim != 4 or X.shape[-1] != cfg.in_channels:
            raise DimensionError(f"expected (N, h, w, {cfg.in_channels}) images, got {X.shape}")
        cols = _im2col(X)
        Z1 = cols @ t["backbone.conv1.weight"].reshape(-1, cfg.hidden_channels) + t["backbone.conv1.bias"]
        A1 = np.maximum(Z1, 0.0)
        F = A1 @ t["backbone.conv2.weight"] + t["backbone.conv2.bias"]
        v.update(cols=cols, Z1=Z1, A1=A1)
    else:
        if X.ndim != 4 or X.shape[-1] != cfg.channels:
            raise DimensionError(f"expected (N, H, W, {cfg.channels}) feature maps, got {X.shape}")
        F = X
    v["F"] = F

    if cfg.variant == "GAP":
        code = agg.gap(F)[:, None, :]
    elif cfg.variant == "BC":
        v["raw"] = agg.flatten_code(agg.bilinear_code(F))[:, None, :]
        code = agg.signed_sqrt(v["raw"])
    else:
        M = generate_masks(F, params.partnet)  # (N, L, H, W)
        v["M"] = M
        if cfg.variant == "GAP_PART":
            code = agg.masked_average(M, F[:, None])
        else:
            raw = agg.flatten_code(agg.weighted_bilinear_code(M, F[:, None]))
            v["raw"] = raw
            code = agg.signed_sqrt(raw)
    v["code"] = code  # (N, parts, code_dim)
    z = np.concatenate([agg.embed(code[:, l], params.embedding(l)) for l in range(cfg.part_count)], axis=-1)
    v["z"] = z
    return agg.l2_normalize(z), ForwardCache(params, v)


def forward(sample: RasterSample, params: ModelParams):
    U, cache = forward_batch(np.asarray(sample.image)[None], params)
    cfg = params.config
    return agg.FinalFeature(U[0], cfg.part_count, cfg.embed_dim), cache


def backward(cache: ForwardCache, dFeature) -> dict:
    """Gradients of ``sum(dFeature * features)`` for every parameter tensor."""
    if cache.consumed:
        raise StaleCacheError("forward cache was already consumed by a backward pass")
    params, v = cache.params, cache.values
    cfg, t = params.config, params.tensors
    z = v["z"]
    dU = np.asarray(dFeature, dtype=np.float64)
    if dU.ndim == 1:
        dU = dU[None]
    if dU.shape != z.shape:
        raise DimensionError(f"feature gradient shape {dU.shape} != {z.shape}")
    cache.consumed = True

    grads = {}
    F, code = v["F"], v["code"]
    N, L, D = z.shape[0], cfg.part_count, cfg.embed_dim
    dz = agg.l2_normalize_backward(z, dU).reshape(N, L, D)
    dcode = np.empty_like(code)
    for l in range(L):
        dcode[:, l], grads[f"embed.{l}.weight"] = agg.embed_backward(code[:, l], params.embedding(l), dz[:, l])

    if cfg.variant == "GAP":
        dF = agg.gap_backward(F, dcode[:, 0])
    elif cfg.variant == "BC":
        C = cfg.channels
        dB = agg.signed_sqrt_backward(v["raw"][:, 0], dcode[:, 0]).reshape(N, C, C)
        dF = agg.bilinear_backward(F, dB)
    else:
        M = v["M"]
        if cfg.variant == "GAP_PART":
            dM, dFp = agg.masked_average_backward(M, F[:, None], dcode)
        else:
            C = cfg.channels
            dB = agg.signed_sqrt_backward(v["raw"], dcode).reshape(N, L, C, C)
            dM, dFp = agg.wbc_backward(M, F[:, None], dB)
        dFm, dpn = partnet_backward(F, params.partnet, dM)
        dF = dFp.sum(axis=1) + dFm
        grads["partnet.weight"], grads["partnet.bias"] = dpn.weight, dpn.bias

    if cfg.use_backbone:
        hid, C = cfg.hidden_channels, cfg.channels
        dF2 = dF.reshape(-1, C)
        grads["backbone.conv2.weight"] = v["A1"].reshape(-1, hid).T @ dF2
        grads["backbone.conv2.bias"] = dF2.sum(axis=0)
        dZ1 = (dF @ t["backbone.conv2.weight"].T) * (v["Z1"] > 0)
        dZ1 = dZ1.reshape(-1, hid)
        grads["backbone.conv1.weight"] = (v["cols"].reshape(dZ1.shape[0], -1).T @ dZ1).reshape(
            t["backbone.conv1.weight"].shape
        )
        grads["backbone.conv1.bias"] = dZ1.sum(axis=0)
    return {k: grads[k] for k in t}


def save_checkpoint(params: ModelParams, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, arr in params.tensors.items():
        fname = f"{name}.wbct"
        write_tensor(out / fname, np.asarray(arr, dtype=np.float64))
        entries.append({"name": name, "file": fname, "shape": list(arr.shape)})
    write_json(
        out / CHECKPOINT_NAME,
        {"variant": params.variant, "config": asdict(params.config), "tensors": entries},
    )
    return out / CHECKPOINT_NAME


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_NAME
    data = json.loads(path.read_text())
    known = {f.name for f in fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in data["config"].items() if k in known})
    if cfg.variant != data["variant"]:
        raise ConfigurationError(f"variant tag {data['variant']!r} disagrees with config {cfg.variant!r}")
    tensors = {e["name"]: read_tensor(path.parent / e["file"]) for e in data["tensors"]}
    expected = init_model(cfg).tensors
    for name, arr in expected.items():
        if name not in tensors or tensors[name].shape != arr.shape:
            raise DimensionError(f"checkpoint tensor {name} missing or misshapen")
    return ModelParams(cfg, {k: tensors[k] for k in expected})
