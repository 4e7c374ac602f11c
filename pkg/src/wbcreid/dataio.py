"""Tensor files, dataset manifests and the synthetic identity generator.

Tensor file layout (all little-endian)::

    offset 0   4 bytes  magic b"WBCT"
    offset 4   u16      format version (1)
    offset 6   u16      rank r
    offset 8   u8       dtype flag: 0 = float32, 1 = float64
    offset 9   r x u32  dims
    offset 9+4r         payload, row-major IEEE-754
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

MAGIC = b"WBCT"
VERSION = 1
_HEADER = struct.Struct("<4sHHB")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_FLAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1}

MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "probe", "gallery")


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigurationError(ValueError):
    pass


def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype not in _FLAGS:
        arr = arr.astype(np.float64)
    flag = _FLAGS[arr.dtype]
    for d in arr.shape:
        if d > 0xFFFFFFFF:
            raise FormatError(f"dimension {d} does not fit in u32", _HEADER.size)
    head = _HEADER.pack(MAGIC, VERSION, arr.ndim, flag)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + dims + np.ascontiguousarray(arr, dtype=_DTYPES[flag]).tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} bytes", len(buf))
    magic, version, rank, flag = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if flag not in _DTYPES:
        raise FormatError(f"unknown dtype flag {flag}", 8)
    off = _HEADER.size
    if len(buf) < off + 4 * rank:
        raise FormatError(f"truncated dims: need {4 * rank} bytes", len(buf))
    dims = struct.unpack_from(f"<{rank}I", buf, off)
    off += 4 * rank
    dtype = _DTYPES[flag]
    count = int(np.prod(dims, dtype=object)) if rank else 1
    nbytes = count * dtype.itemsize
    if len(buf) - off != nbytes:
        raise FormatError(f"payload is {len(buf) - off} bytes, expected {nbytes}", off)
    return np.frombuffer(buf, dtype=dtype, count=count, offset=off).reshape(dims).astype(dtype.newbyteorder("="))


def write_tensor(path, arr) -> None:
    Path(path).write_bytes(encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class SynthConfig:
    identities: int = 16
    images_per_identity: int = 6
    # identities held out of training, split into probe (first image) and gallery
    test_identities: int = 8
    height: int = 24
    width: int = 12
    channels: int = 3
    parts: int = 3
    palette: int = 6
    jitter: int = 2
    noise: float = 0.05
    clutter: float = 0.5
    clutter_density: float = 0.25
    seed: int = 0

    @classmethod
    def part_structured(cls, **overrides) -> "SynthConfig":
        """Larger, noisier set used for the variant comparison."""
        base = dict(identities=120, test_identities=32, palette=5, noise=0.3, clutter=1.0, jitter=3)
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.identities < 1 or self.images_per_identity < 1:
            raise ConfigurationError("need at least one identity and one image per identity")
        if not 0 <= self.test_identities <= self.identities:
            raise ConfigurationError(f"test_identities={self.test_identities} outside [0, {self.identities}]")
        if self.test_identities and self.images_per_identity < 2:
            raise ConfigurationError("held-out identities need >= 2 images for a probe/gallery split")
        if self.jitter < 0 or self.jitter >= min(self.height, self.width):
            raise ConfigurationError(f"jitter {self.jitter} must lie in [0, grid size)")
        if self.noise < 0 or self.clutter < 0:
            raise ConfigurationError("noise and clutter must be non-negative")
        if not 0 <= self.clutter_density <= 1:
            raise ConfigurationError("clutter_density must lie in [0, 1]")
        if self.parts < 1 or self.height - 2 * self.jitter < self.parts:
            raise ConfigurationError(f"cannot place {self.parts} parts in height {self.height} with jitter {self.jitter}")
        if self.palette < 2 or self.palette ** self.parts < self.identities:
            raise ConfigurationError(
                f"palette {self.palette} with {self.parts} parts yields fewer than {self.identities} distinct identities"
            )


@dataclass
class SampleSet:
    images: np.ndarray  # (N, h, w, c)
    labels: np.ndarray  # (N,) int
    splits: list

    def subset(self, split: str) -> "SampleSet":
        idx = [i for i, s in enumerate(self.splits) if s == split]
        return SampleSet(self.images[idx], self.labels[idx], [split] * len(idx))


@dataclass
class DatasetManifest:
    samples: list  # of {"path", "label", "split"}
    generator: Optional[dict] = None
    root: Optional[Path] = field(default=None, compare=False)

    def validate(self) -> None:
        labels = sorted({int(s["label"]) for s in self.samples})
        if labels != list(range(len(labels))):
            raise ConfigurationError(f"identity labels are not a contiguous 0-based index: {labels[:10]}")
        bad = [s["split"] for s in self.samples if s["split"] not in SPLITS]
        if bad:
            raise ConfigurationError(f"unknown split tags {sorted(set(bad))}")
        probe = {s["path"] for s in self.samples if s["split"] == "probe"}
        gallery = {s["path"] for s in self.samples if s["split"] == "gallery"}
        if probe & gallery:
            raise ConfigurationError(f"probe and gallery share samples: {sorted(probe & gallery)[:5]}")

    def to_json(self) -> dict:
        out = {"samples": self.samples}
        if self.generator is not None:
            out["generator"] = self.generator
        return out

    def load(self) -> SampleSet:
        images = np.stack([read_tensor(self.root / s["path"]) for s in self.samples])
        labels = np.array([int(s["label"]) for s in self.samples])
        return SampleSet(images, labels, [s["split"] for s in self.samples])


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise ConfigurationError(f"no {MANIFEST_NAME} in {root}")
    data = json.loads(path.read_text())
    m = DatasetManifest(data["samples"], data.get("generator"), root)
    m.validate()
    return m


def load_dataset(root) -> SampleSet:
    return load_manifest(root).load()


def _identity_codes(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    # distinct palette-index tuples so every identity is a different arrangement
    total = cfg.palette ** cfg.parts
    picks = rng.choice(total, size=cfg.identities, replace=False)
    return np.array([[(p // cfg.palette ** k) % cfg.palette for k in range(cfg.parts)] for p in picks])


def _spread_palette(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    # farthest-point pick from random candidates keeps palette colours apart
    cand = rng.uniform(-1.0, 1.0, size=(64 * cfg.palette, cfg.channels))
    chosen = [0]
    dist = np.linalg.norm(cand - cand[0], axis=1)
    for _ in range(cfg.palette - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(cand - cand[nxt], axis=1))
    return cand[chosen]


def _render(colors, palette, cfg: SynthConfig, shift, rng) -> np.ndarray:
    h, w, c = cfg.height, cfg.width, cfg.channels
    img = np.zeros((h, w, c))
    # background clutter: sparse speckle in palette colours, so it matches
    # body parts in colour and differs only in local texture
    speckle = rng.random((h, w)) < cfg.clutter_density
    img += cfg.clutter * speckle[..., None] * palette[rng.integers(len(palette), size=(h, w))]
    top = cfg.jitter
    body = h - 2 * cfg.jitter
    left, right = w // 4, w - w // 4
    bounds = np.linspace(0, body, cfg.parts + 1).round().astype(int)
    for part in range(cfg.parts):
        r0, r1 = top + bounds[part], top + bounds[part + 1]
        img[r0:r1, left:right] = colors[part]
    dy, dx = shift
    img = np.roll(img, (dy, dx), axis=(0, 1))
    if cfg.noise:
        img += cfg.noise * rng.standard_normal(img.shape)
    return img


def generate_arrays(cfg: SynthConfig) -> SampleSet:
    """Synthetic identities built from stacked coloured body parts.

    Each identity is an ordered choice of part colours from a shared palette;
    samples are shifted by up to ``jitter`` pixels and perturbed by noise and
    background clutter. Deterministic given ``cfg.seed``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    palette = _spread_palette(cfg, rng)
    codes = _identity_codes(cfg, rng)
    images, labels, splits = [], [], []
    first_test = cfg.identities - cfg.test_identities
    for ident in range(cfg.identities):
        colors = palette[codes[ident]]
        for n in range(cfg.images_per_identity):
            shift = rng.integers(-cfg.jitter, cfg.jitter + 1, size=2)
            images.append(_render(colors, palette, cfg, shift, rng))
            labels.append(ident)
            if ident < first_test:
                splits.append("train")
            else:
                splits.append("probe" if n == 0 else "gallery")
    return SampleSet(np.stack(images), np.array(labels), splits)


def synth_generate(cfg: SynthConfig, out_dir) -> DatasetManifest:
    data = generate_arrays(cfg)
    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    samples = []
    for n, (img, label, split) in enumerate(zip(data.images, data.labels, data.splits)):
        rel = f"tensors/{n:05d}.wbct"
        write_tensor(out / rel, img)
        samples.append({"path": rel, "label": int(label), "split": split})
    manifest = DatasetManifest(samples, {"synth": asdict(cfg)}, out)
    manifest.validate()
    write_json(out / MANIFEST_NAME, manifest.to_json())
    return manifest


def resplit_probe_gallery(data: SampleSet) -> SampleSet:
    """Turn every sample into probe (first image of each identity) or gallery."""
    seen = set()
    splits = []
    for label in data.labels:
        splits.append("gallery" if label in seen else "probe")
        seen.add(label)
    return SampleSet(data.images, data.labels, splits)


def pixel_nn_rank1(images, labels) -> float:
    """Leave-one-out nearest-neighbour accuracy on raw pixels."""
    X = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
    y = np.asarray(labels)
    sq = np.sum(X * X, axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(d, np.inf)
    return float(np.mean(y[np.argmin(d, axis=1)] == y))
