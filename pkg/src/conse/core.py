"""Convex combination of label embeddings and cosine ranking of candidates.

A classifier's distribution over training labels is reduced to its top-T
entries, renormalized, and used to mix the training labels' mean embeddings.
Candidates are then ranked by their best cosine similarity over individual
synonym word vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .embeddings import LabelEmbedding, Source, _format_float, _lines, _write_text
from .errors import (
    DegenerateDistributionError,
    EmptyCandidateSetError,
    ScoreFormatError,
    UnresolvedLabelError,
    ZeroConseVectorError,
)

SUM_TOLERANCE = 1e-4


@dataclass(frozen=True, eq=False)
class ScoreRecord:
    """One image's classifier output over the training labels.

    ``scores[i]`` is the probability of ``label_ids[i]``. Records built by
    :func:`scale_scores` are flagged ``probabilistic=False`` and skip the
    sum-to-one check.
    """

    image_id: str
    scores: np.ndarray
    label_ids: tuple[int, ...]
    true_label: Optional[int] = None
    probabilistic: bool = True

    def __post_init__(self):
        scores = np.array(self.scores, dtype=np.float64)
        if scores.ndim != 1 or scores.shape[0] != len(self.label_ids):
            raise ScoreFormatError(
                f"{self.image_id}: {scores.shape} scores for {len(self.label_ids)} training labels"
            )
        if not np.all(np.isfinite(scores)):
            raise ScoreFormatError(f"{self.image_id}: non-finite score")
        if np.any(scores < 0):
            raise ScoreFormatError(f"{self.image_id}: negative score")
        if self.probabilistic:
            total = math.fsum(scores)
            if abs(total - 1.0) > SUM_TOLERANCE:
                raise ScoreFormatError(f"{self.image_id}: scores sum to {total}, not 1")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "label_ids", tuple(int(i) for i in self.label_ids))


@dataclass(frozen=True, eq=False)
class ConseVector:
    image_id: str
    vector: np.ndarray
    norm: float
    support: tuple[tuple[int, float], ...]

    @property
    def direction(self) -> np.ndarray:
        """Unit vector along ``vector``; the ranking only depends on this."""
        return self.vector / self.norm if self.norm else self.vector

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "vector": [float(x) for x in self.vector],
            "norm": self.norm,
            "direction": [float(x) for x in self.direction],
            "support": [[label_id, w] for label_id, w in self.support],
        }


@dataclass(frozen=True, eq=False)
class RankedPrediction:
    image_id: str
    ranked: tuple[tuple[int, float], ...]
    vector: Optional[np.ndarray] = None
    norm: Optional[float] = None

    @property
    def labels(self) -> tuple[int, ...]:
        return tuple(label_id for label_id, _ in self.ranked)

    @property
    def scores(self) -> tuple[float, ...]:
        return tuple(s for _, s in self.ranked)

    def __eq__(self, other):
        if not isinstance(other, RankedPrediction):
            return NotImplemented
        return self.image_id == other.image_id and self.ranked == other.ranked

    __hash__ = None


# --------------------------------------------------------------------------
# Score files
# --------------------------------------------------------------------------


def load_scores(source: Source, train_order: Sequence[int]) -> list[ScoreRecord]:
    """Parse a JSON-lines score file; each line's scores follow ``train_order``."""
    return list(iter_scores(source, train_order))


def iter_scores(source: Source, train_order: Sequence[int]) -> Iterator[ScoreRecord]:
    train_order = tuple(train_order)
    for lineno, line in _lines(source):
        try:
            obj = json.loads(line)
            image_id = str(obj["image_id"])
            scores = obj["scores"]
            true_label = obj.get("true_label")
        except (ValueError, KeyError, TypeError) as exc:
            raise ScoreFormatError(f"line {lineno}: {exc}") from None
        if true_label is not None:
            true_label = int(true_label)
        try:
            yield ScoreRecord(image_id, scores, train_order, true_label)
        except ScoreFormatError as exc:
            raise ScoreFormatError(f"line {lineno}: {exc}") from None


def write_scores(records: Iterable[ScoreRecord], dest) -> None:
    lines = []
    for rec in records:
        obj = {"image_id": rec.image_id, "scores": "@"}
        if rec.true_label is not None:
            obj["true_label"] = rec.true_label
        # splice floats in by hand so they round-trip exactly
        body = "[" + ", ".join(_format_float(x) for x in rec.scores) + "]"
        lines.append(json.dumps(obj).replace('"@"', body))
    _write_text(dest, "".join(line + "\n" for line in lines))


# --------------------------------------------------------------------------
# Top-T and convex combination
# --------------------------------------------------------------------------


def top_t(record: ScoreRecord, T: int) -> list[tuple[int, float]]:
    """The ``T`` most probable training labels, highest first.

    Ties go to the smaller label id; zero-probability labels are never
    returned, so the result can be shorter than ``T``.
    """
    n0 = len(record.scores)
    if not 1 <= T <= n0:
        raise ValueError(f"T must be in [1, {n0}], got {T}")
    ids = np.asarray(record.label_ids)
    positive = np.flatnonzero(record.scores > 0)
    if positive.size == 0:
        raise DegenerateDistributionError(f"{record.image_id}: all scores are zero")
    scores = record.scores[positive]
    order = np.lexsort((ids[positive], -scores))[:T]
    return [(int(ids[positive[i]]), float(scores[i])) for i in order]


def conse_embed(
    record: ScoreRecord, T: int, embeddings: Mapping[int, LabelEmbedding]
) -> ConseVector:
    """Probability-weighted mean of the top-T training label embeddings."""
    support = top_t(record, T)
    z = math.fsum(p for _, p in support)
    if z <= 0:
        raise DegenerateDistributionError(f"{record.image_id}: top-{T} mass is zero")
    try:
        means = np.stack([embeddings[label_id].mean_vector for label_id, _ in support])
    except KeyError as exc:
        raise UnresolvedLabelError(
            f"{record.image_id}: training label {exc.args[0]} has no embedding"
        ) from None
    weights = np.array([p / z for _, p in support])
    vector = weights @ means
    vector.setflags(write=False)
    return ConseVector(
        record.image_id,
        vector,
        float(np.linalg.norm(vector)),
        tuple((label_id, float(w)) for (label_id, _), w in zip(support, weights)),
    )


def scale_scores(record: ScoreRecord, c: float) -> ScoreRecord:
    if not c > 0:
        raise ValueError(f"scale must be positive, got {c}")
    return ScoreRecord(
        record.image_id, record.scores * c, record.label_ids, record.true_label, probabilistic=False
    )


# --------------------------------------------------------------------------
# Candidate ranking
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CandidateIndex:
    """Exact-scan cosine index over the synonym word vectors of a candidate set.

    Candidates are stored in ascending label-id order, so a stable sort on
    descending score yields the ascending-id tie-break for free.
    """

    label_ids: np.ndarray
    words: np.ndarray
    word_norms: np.ndarray
    owners: np.ndarray
    offsets: np.ndarray
    terms: tuple[str, ...] = field(repr=False)

    @classmethod
    def build(
        cls, candidates: Iterable[int], embeddings: Mapping[int, LabelEmbedding]
    ) -> "CandidateIndex":
        ids = sorted(set(int(c) for c in candidates))
        if not ids:
            raise EmptyCandidateSetError("candidate set is empty")
        blocks, owners, offsets, terms = [], [], [], []
        start = 0
        for pos, label_id in enumerate(ids):
            try:
                emb = embeddings[label_id]
            except KeyError:
                raise UnresolvedLabelError(f"candidate label {label_id} has no embedding") from None
            blocks.append(emb.word_vectors)
            owners.extend([pos] * len(emb.word_vectors))
            offsets.append(start)
            start += len(emb.word_vectors)
            terms.extend(emb.terms or [""] * len(emb.word_vectors))
        words = np.ascontiguousarray(np.concatenate(blocks))
        return cls(
            np.array(ids),
            words,
            np.linalg.norm(words, axis=1),
            np.array(owners),
            np.array(offsets),
            tuple(terms),
        )

    def __len__(self) -> int:
        return len(self.label_ids)

    def word_cosines(self, vector: np.ndarray) -> np.ndarray:
        """Cosine of ``vector`` against every word vector."""
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise ZeroConseVectorError("zero-norm embedding, cosine undefined")
        # one matrix-vector product per query: a batched GEMM rounds differently
        # depending on batch composition, which would break run-to-run identity
        return (self.words @ vector) / self.word_norms / norm

    def label_scores(self, vector: np.ndarray) -> np.ndarray:
        """Per-candidate best word cosine, aligned with ``self.label_ids``."""
        return np.maximum.reduceat(self.word_cosines(vector), self.offsets)

    def _order(self, scores: np.ndarray, top: Optional[int]) -> np.ndarray:
        neg = -scores
        if top is None or top >= len(neg):
            return np.argsort(neg, kind="stable")
        # keep every candidate tied with the top-th score so the id tie-break stays exact
        cutoff = np.partition(neg, top - 1)[top - 1]
        keep = np.flatnonzero(neg <= cutoff)
        return keep[np.argsort(neg[keep], kind="stable")][:top]

    def rank(self, v: ConseVector, top: Optional[int] = None) -> RankedPrediction:
        if v.norm == 0:
            raise ZeroConseVectorError(f"{v.image_id}: ConSE vector has zero norm")
        return self.rank_many([v], top)[0]

    def rank_many(
        self, vs: Sequence[ConseVector], top: Optional[int] = None
    ) -> list[RankedPrediction]:
        out = []
        for v in vs:
            row = self.label_scores(v.vector)
            order = self._order(row, top)
            ranked = tuple((int(self.label_ids[i]), float(row[i])) for i in order)
            out.append(RankedPrediction(v.image_id, ranked, v.vector, v.norm))
        return out

    def rank_words(self, v: ConseVector) -> list[tuple[int, str, float]]:
        """Word-level ranking before collapsing synonyms into labels."""
        cos = self.word_cosines(v.vector)
        order = np.lexsort((self.label_ids[self.owners], -cos))
        return [(int(self.label_ids[self.owners[i]]), self.terms[i], float(cos[i])) for i in order]


def rank_candidates(
    v: ConseVector, candidates: Iterable[int], embeddings: Mapping[int, LabelEmbedding]
) -> RankedPrediction:
    if v.norm == 0:
        raise ZeroConseVectorError(f"{v.image_id}: ConSE vector has zero norm")
    return CandidateIndex.build(candidates, embeddings).rank(v)


def precompute_top1_lists(
    train_ids: Iterable[int],
    embeddings: Mapping[int, LabelEmbedding],
    index: CandidateIndex,
) -> dict[int, RankedPrediction]:
    """Ranked candidate list for every training label, i.e. ConSE with T=1."""
    train_ids = list(train_ids)
    vs = [
        ConseVector(str(t), embeddings[t].mean_vector, embeddings[t].norm, ((t, 1.0),))
        for t in train_ids
    ]
    return dict(zip(train_ids, index.rank_many(vs)))
