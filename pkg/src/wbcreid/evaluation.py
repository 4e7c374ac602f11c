"""Single-shot retrieval evaluation: gallery ranking, CMC and mAP."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import ModelParams, forward_batch
from .tensor import DimensionError


class ProtocolError(ValueError):
    pass


@dataclass
class RankingReport:
    rankings: np.ndarray  # (probes, G) gallery indices, nearest first
    cmc: np.ndarray  # (G,) match rate at rank r = 1..G
    mAP: float

    def rank(self, r: int) -> float:
        return float(self.cmc[min(r, len(self.cmc)) - 1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "cmc"])
        for r, value in enumerate(self.cmc, start=1):
            w.writerow([r, repr(float(value))])
        w.writerow(["mAP", repr(float(self.mAP))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"cmc": [float(c) for c in self.cmc], "mAP": float(self.mAP)}, indent=2) + "\n"


def _distances(probes: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    if probes.shape[-1] != gallery.shape[-1]:
        raise DimensionError(f"probe dim {probes.shape[-1]} != gallery dim {gallery.shape[-1]}")
    diff = probes[:, None, :] - gallery[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def rank_gallery(probe, gallery) -> np.ndarray:
    """Gallery indices by ascending distance; ties keep ascending index order."""
    probe = np.asarray(probe, dtype=np.float64)
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    return np.argsort(_distances(probe[None], gallery)[0], kind="stable")


def _match_matrix(rankings, probe_labels, gallery_labels) -> np.ndarray:
    rankings = np.atleast_2d(np.asarray(rankings))
    matches = np.asarray(gallery_labels)[rankings] == np.asarray(probe_labels)[:, None]
    empty = np.flatnonzero(~matches.any(axis=1))
    if empty.size:
        raise ProtocolError(f"probes {empty.tolist()} have no true match in the gallery")
    return matches


def cmc(rankings, probe_labels, gallery_labels) -> np.ndarray:
    matches = _match_matrix(rankings, probe_labels, gallery_labels)
    first = matches.argmax(axis=1)
    hits = first[:, None] <= np.arange(matches.shape[1])[None, :]
    return hits.mean(axis=0)


def average_precision(match_row) -> float:
    match_row = np.asarray(match_row, dtype=bool)
    ranks = np.flatnonzero(match_row) + 1
    # exact rational sum over hits, rounded once
    return float(sum(Fraction(t, int(r)) for t, r in enumerate(ranks, start=1)) / ranks.size)


def mean_ap(rankings, probe_labels, gallery_labels) -> float:
    matches = _match_matrix(rankings, probe_labels, gallery_labels)
    return float(np.mean([average_precision(row) for row in matches]))


def rank_all(probe_features, gallery_features) -> np.ndarray:
    P = np.atleast_2d(np.asarray(probe_features, dtype=np.float64))
    G = np.atleast_2d(np.asarray(gallery_features, dtype=np.float64))
    return np.argsort(_distances(P, G), axis=1, kind="stable")


def evaluate_features(probe_features, probe_labels, gallery_features, gallery_labels) -> RankingReport:
    rankings = rank_all(probe_features, gallery_features)
    return RankingReport(
        rankings,
        cmc(rankings, probe_labels, gallery_labels),
        mean_ap(rankings, probe_labels, gallery_labels),
    )


def extract(params: ModelParams, images, batch_size: int = 64) -> np.ndarray:
    images = np.asarray(images, dtype=np.float64)
    out = [forward_batch(images[s : s + batch_size], params)[0] for s in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.config.output_dim))


def evaluate(params: ModelParams, probes, gallery) -> RankingReport:
    """``probes`` and ``gallery`` are ``(images, labels)`` pairs."""
    (p_img, p_lab), (g_img, g_lab) = probes, gallery
    return evaluate_features(extract(params, p_img), p_lab, extract(params, g_img), g_lab)
