"""Variant comparison and part-count sweep on one dataset."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .dataio import ConfigurationError, SampleSet
from .evaluation import evaluate
from .loss import LossConfig
from .model import VARIANTS, ModelConfig
from .trainer import SGDConfig, train

RANKS = (1, 5, 10, 20)
COLUMNS = ("section", "variant", "parts", "rank1", "rank5", "rank10", "rank20", "mAP")


@dataclass
class AblationRow:
    section: str  # "variant" or "sweep"
    variant: str
    parts: int
    metrics: dict  # rank1, rank5, rank10, rank20, mAP; medians over seeds
    per_seed: list = field(default_factory=list)


@dataclass
class AblationResult:
    rows: list

    def row(self, section: str, variant: str, parts=None) -> AblationRow:
        for r in self.rows:
            if r.section == section and r.variant == variant and (parts is None or r.parts == parts):
                return r
        raise KeyError((section, variant, parts))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([r.section, r.variant, r.parts] + [repr(float(r.metrics[c])) for c in COLUMNS[3:]])
        return buf.getvalue()


def _metrics(report) -> dict:
    out = {f"rank{r}": report.rank(r) for r in RANKS}
    out["mAP"] = report.mAP
    return out


def _run(data: SampleSet, model_cfg, sgd_cfg, loss_cfg) -> dict:
    train_set, probe, gallery = data.subset("train"), data.subset("probe"), data.subset("gallery")
    params, _ = train(train_set.images, train_set.labels, model_cfg, sgd_cfg, loss_cfg)
    return _metrics(evaluate(params, (probe.images, probe.labels), (gallery.images, gallery.labels)))


def _median_row(section, variant, parts, runs) -> AblationRow:
    keys = runs[0].keys()
    return AblationRow(section, variant, parts, {k: float(np.median([r[k] for r in runs])) for k in keys}, runs)


def run_ablation(
    data: SampleSet,
    model_cfg: ModelConfig = ModelConfig(),
    sgd_cfg: SGDConfig = SGDConfig.desk(),
    loss_cfg: LossConfig = LossConfig(),
    seeds: int = 1,
    sweep=(1, 3, 5, 8),
    variants=VARIANTS,
) -> AblationResult:
    """Train and evaluate each variant (and WBC_PART at each part count).

    Seed ``n`` offsets both the model and batching seeds; metrics are medians
    over seeds.
    """
    if not {"train", "probe", "gallery"} <= set(data.splits):
        raise ConfigurationError("ablation needs train, probe and gallery splits")
    if seeds < 1:
        raise ConfigurationError("seeds must be >= 1")
    cache = {}

    def runs(variant, parts):
        key = (variant, parts if variant in ("GAP_PART", "WBC_PART") else None)
        if key not in cache:
            cache[key] = [
                _run(
                    data,
                    replace(model_cfg, variant=variant, parts=parts, seed=model_cfg.seed + n),
                    replace(sgd_cfg, seed=sgd_cfg.seed + n),
                    loss_cfg,
                )
                for n in range(seeds)
            ]
        return cache[key]

    rows = []
    for variant in variants:
        parts = model_cfg.parts if variant in ("GAP_PART", "WBC_PART") else 1
        rows.append(_median_row("variant", variant, parts, runs(variant, model_cfg.parts)))
    for parts in sweep:
        rows.append(_median_row("sweep", "WBC_PART", parts, runs("WBC_PART", parts)))
    return AblationResult(rows)
