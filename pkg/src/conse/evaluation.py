"""Flat hit@k, hierarchical precision@k, and the batch evaluation pipeline."""

from __future__ import annotations

import enum
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .core import CandidateIndex, RankedPrediction, ScoreRecord, conse_embed
from .embeddings import (
    EmbeddingTable,
    LabelCatalog,
    LabelEmbedding,
    label_embeddings,
    load_catalog,
    load_embeddings,
)
from .errors import ConseError, ZeroConseVectorError
from .hierarchy import (
    LabelHierarchy,
    hop_candidate_set,
    load_hierarchy,
    relevance_from_distances,
    relevance_set,
)

logger = logging.getLogger(__name__)

DEFAULT_KS = (1, 2, 5, 10, 20)


class CandidateMode(str, enum.Enum):
    TEST_ONLY = "TEST_ONLY"
    PLUS_TRAIN = "PLUS_TRAIN"


def flat_hit_at_k(pred: RankedPrediction, true_label: int, k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return int(true_label in pred.labels[:k])


def hier_precision_at_k(
    pred: RankedPrediction,
    true_label: int,
    k: int,
    h: LabelHierarchy,
    universe: Iterable[int],
) -> float:
    relevant = relevance_set(h, true_label, k, universe)
    return sum(1 for y in pred.labels[:k] if y in relevant) / k


@dataclass(frozen=True)
class Assets:
    table: EmbeddingTable
    catalog: LabelCatalog
    embeddings: Mapping[int, LabelEmbedding]
    hierarchy: Optional[LabelHierarchy] = None

    @classmethod
    def load(cls, embeddings, label_map, splits, hierarchy=None) -> "Assets":
        table = load_embeddings(embeddings)
        catalog = load_catalog(label_map, splits, table)
        h = None
        if hierarchy is not None:
            h = load_hierarchy(
                hierarchy, [lab.label_id for lab in catalog.labels] + list(catalog.train_order)
            )
        return cls(table, catalog, label_embeddings(catalog, table), h)


def candidate_set(
    assets: Assets, mode: CandidateMode, max_hops: Optional[int] = None
) -> set[int]:
    """Resolved test labels (optionally hop-filtered), plus training labels in PLUS_TRAIN mode."""
    cat = assets.catalog
    cands = set(cat.test_ids)
    if max_hops is not None:
        if assets.hierarchy is None:
            raise ValueError("max_hops requires a hierarchy")
        cands = hop_candidate_set(assets.hierarchy, cat.train_ids, cands, max_hops)
    if CandidateMode(mode) is CandidateMode.PLUS_TRAIN:
        cands |= set(cat.train_ids)
    return cands


@dataclass(frozen=True)
class EvalConfig:
    T: int
    candidate_mode: CandidateMode = CandidateMode.TEST_ONLY
    ks: tuple[int, ...] = DEFAULT_KS
    max_hops: Optional[int] = None
    threads: Optional[int] = None
    chunk_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "candidate_mode", CandidateMode(self.candidate_mode))
        ks = tuple(sorted(set(int(k) for k in self.ks)))
        if not ks or ks[0] < 1:
            raise ValueError(f"ks must be positive integers, got {self.ks}")
        object.__setattr__(self, "ks", ks)
        if self.T < 1:
            raise ValueError(f"T must be >= 1, got {self.T}")

    def echo(self) -> dict:
        return {
            "T": self.T,
            "candidate_mode": self.candidate_mode.value,
            "ks": list(self.ks),
            "max_hops": self.max_hops,
        }


@dataclass(frozen=True)
class ImageResult:
    image_id: str
    true_label: int
    hits: dict
    precisions: dict
    norm: float
    top: tuple[int, ...]


@dataclass(frozen=True)
class EvalReport:
    config: dict
    candidate_count: int
    total: int
    hit_at_k: dict
    hier_precision_at_k: dict
    skipped: tuple[dict, ...]
    images: tuple[ImageResult, ...] = field(default=(), repr=False)

    @property
    def evaluated(self) -> int:
        return self.total - len(self.skipped)

    def skip_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for s in self.skipped:
            counts[s["reason"]] = counts.get(s["reason"], 0) + 1
        return dict(sorted(counts.items()))

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "candidate_count": self.candidate_count,
            "total": self.total,
            "evaluated": self.evaluated,
            "skipped": len(self.skipped),
            "skip_counts": self.skip_counts(),
            "skipped_images": list(self.skipped),
            "flat_hit_at_k_percent": {
                str(k): round(v, 1) for k, v in self.hit_at_k.items()
            },
            "hierarchical_precision_at_k": {
                str(k): None if v is None else round(v, 3)
                for k, v in self.hier_precision_at_k.items()
            },
            "raw": {
                "flat_hit_at_k_percent": {str(k): v for k, v in self.hit_at_k.items()},
                "hierarchical_precision_at_k": {
                    str(k): v for k, v in self.hier_precision_at_k.items()
                },
            },
        }

    def format_table(self) -> str:
        ks = list(self.hit_at_k)
        head = f"{'metric':<28}" + "".join(f"{k:>8}" for k in ks)
        rule = "-" * len(head)
        hit = f"{'Flat hit@k (%)':<28}" + "".join(f"{self.hit_at_k[k]:>8.1f}" for k in ks)
        lines = [self._caption(), rule, head, rule, hit]
        if any(v is not None for v in self.hier_precision_at_k.values()):
            prec = f"{'Hierarchical precision@k':<28}" + "".join(
                f"{'n/a':>8}" if self.hier_precision_at_k[k] is None
                else f"{self.hier_precision_at_k[k]:>8.3f}"
                for k in ks
            )
            lines.append(prec)
        lines.append(rule)
        lines.append(
            f"images: {self.total} total, {self.evaluated} evaluated, {len(self.skipped)} skipped"
        )
        for reason, n in self.skip_counts().items():
            lines.append(f"  skipped ({reason}): {n}")
        return "\n".join(lines)

    def _caption(self) -> str:
        c = self.config
        hops = "any" if c.get("max_hops") is None else c["max_hops"]
        return (
            f"ConSE({c['T']})  candidates={self.candidate_count} "
            f"mode={c['candidate_mode']} max_hops={hops}"
        )


def _score_chunk(chunk, index, ks, hierarchy, universe):
    top = max(ks)
    preds = index.rank_many([v for _, v in chunk], top=top)
    dist_cache: dict = {}
    results = []
    for (rec, v), pred in zip(chunk, preds):
        hits = {k: flat_hit_at_k(pred, rec.true_label, k) for k in ks}
        precisions = {}
        for k in ks:
            if hierarchy is None or k > len(universe):
                precisions[k] = None
                continue
            if rec.true_label not in dist_cache:
                dist_cache[rec.true_label] = hierarchy.distances_from([rec.true_label])
            relevant = relevance_from_distances(dist_cache[rec.true_label], k, universe)
            precisions[k] = sum(1 for y in pred.labels[:k] if y in relevant) / k
        results.append(
            ImageResult(rec.image_id, rec.true_label, hits, precisions, v.norm, pred.labels)
        )
    return results


def evaluate_batch(
    records: Iterable[ScoreRecord], config: EvalConfig, assets: Assets
) -> EvalReport:
    """Run top-T -> combine -> rank -> score over every record.

    Per-image failures never abort the batch: the image is itemized in
    ``skipped`` and counts as a miss in every aggregate.
    """
    universe = frozenset(candidate_set(assets, config.candidate_mode, config.max_hops))
    index = CandidateIndex.build(universe, assets.embeddings)

    total = 0
    skipped = []
    ready = []
    for rec in records:
        total += 1
        if rec.true_label is None:
            skipped.append({"image_id": rec.image_id, "reason": "missing true label"})
            continue
        if rec.true_label not in universe:
            skipped.append({"image_id": rec.image_id, "reason": "excluded label"})
            continue
        try:
            v = conse_embed(rec, min(config.T, len(rec.scores)), assets.embeddings)
            if v.norm == 0:
                raise ZeroConseVectorError(f"{rec.image_id}: ConSE vector has zero norm")
        except ConseError as exc:
            skipped.append({"image_id": rec.image_id, "reason": type(exc).__name__})
            logger.info("skipping %s: %s", rec.image_id, exc)
            continue
        ready.append((rec, v))

    chunks = [ready[i : i + config.chunk_size] for i in range(0, len(ready), config.chunk_size)]
    threads = config.threads or os.cpu_count() or 1
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(
                lambda c: _score_chunk(c, index, config.ks, assets.hierarchy, universe), chunks
            )
            results = [r for part in parts for r in part]
    else:
        results = [
            r for c in chunks for r in _score_chunk(c, index, config.ks, assets.hierarchy, universe)
        ]

    results.sort(key=lambda r: r.image_id)
    skipped.sort(key=lambda s: (s["image_id"], s["reason"]))
    denom = max(total, 1)
    hit_at_k = {k: 100.0 * sum(r.hits[k] for r in results) / denom for k in config.ks}
    hier = {}
    for k in config.ks:
        vals = [r.precisions[k] for r in results]
        if assets.hierarchy is None or k > len(universe):
            hier[k] = None
        else:
            hier[k] = math.fsum(vals) / denom
    return EvalReport(
        config.echo(),
        len(universe),
        total,
        hit_at_k,
        hier,
        tuple(skipped),
        tuple(results),
    )
