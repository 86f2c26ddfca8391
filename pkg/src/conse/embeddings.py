"""Word-embedding tables, label catalogs and per-label averaged embeddings.

File formats (all UTF-8, LF line endings):

* embeddings: first line ``<count> <dim>``, then ``<term> <f1> ... <fq>``
* label map:  ``label_id<TAB>syn1,syn2,...``
* splits:     ``label_id<SPACE>TRAIN|TEST``
"""

from __future__ import annotations

import enum
import io
import logging
import math
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping, Union

import numpy as np

from .errors import (
    CatalogError,
    EmbeddingFormatError,
    UnresolvedLabelError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

Source = Union[str, os.PathLike, bytes, IO]

NORM_TOLERANCE = 1e-6


def _read_text(source: Source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8")
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def _lines(source: Source) -> Iterator[tuple[int, str]]:
    for lineno, line in enumerate(_read_text(source).split("\n"), start=1):
        if line.strip():
            yield lineno, line


def _format_float(x: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(x))


# --------------------------------------------------------------------------
# Embedding table
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Immutable term -> unit-norm vector map.

    ``vectors`` is a read-only ``(len(terms), dimension)`` float64 array whose
    row ``i`` belongs to ``terms[i]``.
    """

    terms: tuple[str, ...]
    vectors: np.ndarray
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(self.terms):
            raise EmbeddingFormatError(
                f"vectors shape {vectors.shape} does not match {len(self.terms)} terms"
            )
        if vectors.shape[1] < 1:
            raise EmbeddingFormatError("dimension must be positive")
        index: dict[str, int] = {}
        for i, term in enumerate(self.terms):
            if not term:
                raise EmbeddingFormatError("empty term")
            if term in index:
                raise EmbeddingFormatError(f"duplicate term {term!r}")
            index[term] = i
        norms = np.linalg.norm(vectors, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > NORM_TOLERANCE)
        if bad.size:
            raise EmbeddingFormatError(
                f"term {self.terms[bad[0]]!r} has norm {norms[bad[0]]}, expected 1"
            )
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_raw(cls, terms: Iterable[str], vectors) -> "EmbeddingTable":
        """Build a table from arbitrary (nonzero, finite) vectors, unit-normalizing each."""
        terms = tuple(terms)
        vectors = np.asarray(vectors, dtype=np.float64)
        return cls(terms, _normalize_rows(vectors, terms))

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term: str) -> bool:
        return term in self._index

    def __getitem__(self, term: str) -> np.ndarray:
        return self.vectors[self._index[term]]

    def get(self, term: str):
        i = self._index.get(term)
        return None if i is None else self.vectors[i]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return self.terms == other.terms and np.array_equal(self.vectors, other.vectors)

    __hash__ = None


def _normalize_rows(vectors: np.ndarray, terms) -> np.ndarray:
    if not np.all(np.isfinite(vectors)):
        row = int(np.flatnonzero(~np.all(np.isfinite(vectors), axis=1))[0])
        raise EmbeddingFormatError(f"non-finite value in vector for {terms[row]!r}")
    norms = np.linalg.norm(vectors, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroVectorError(f"zero vector for term {terms[zero[0]]!r}")
    return vectors / norms[:, None]


def load_embeddings(source: Source) -> EmbeddingTable:
    """Parse the embedding text format and renormalize every vector to unit norm."""
    lines = _lines(source)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise EmbeddingFormatError("empty embedding file") from None
    fields = header.split()
    if len(fields) != 2:
        raise EmbeddingFormatError(f"line {lineno}: header must be '<count> <dim>'")
    try:
        count, dim = int(fields[0]), int(fields[1])
    except ValueError:
        raise EmbeddingFormatError(f"line {lineno}: non-integer header {header!r}") from None
    if count < 0 or dim < 1:
        raise EmbeddingFormatError(f"line {lineno}: invalid header {header!r}")

    terms: list[str] = []
    seen: set[str] = set()
    rows = np.empty((count, dim), dtype=np.float64)
    for lineno, line in lines:
        parts = line.split()
        if len(parts) != dim + 1:
            raise EmbeddingFormatError(
                f"line {lineno}: expected {dim} values, got {len(parts) - 1}"
            )
        term = parts[0]
        if term in seen:
            raise EmbeddingFormatError(f"line {lineno}: duplicate term {term!r}")
        if len(terms) >= count:
            raise EmbeddingFormatError(f"header declares {count} entries, body has more")
        try:
            values = [float(x) for x in parts[1:]]
        except ValueError:
            raise EmbeddingFormatError(f"line {lineno}: unparseable number") from None
        if not all(math.isfinite(v) for v in values):
            raise EmbeddingFormatError(f"line {lineno}: non-finite value for {term!r}")
        rows[len(terms)] = values
        terms.append(term)
        seen.add(term)
    if len(terms) != count:
        raise EmbeddingFormatError(f"header declares {count} entries, body has {len(terms)}")
    return EmbeddingTable.from_raw(terms, rows)


def write_embeddings(table: EmbeddingTable, dest: Union[str, os.PathLike, IO]) -> None:
    lines = [f"{len(table)} {table.dimension}"]
    for term, vec in zip(table.terms, table.vectors):
        lines.append(term + " " + " ".join(_format_float(x) for x in vec))
    _write_text(dest, "\n".join(lines) + "\n")


def _write_text(dest, text: str) -> None:
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "wb") as fh:
            fh.write(text.encode("utf-8"))
    elif isinstance(dest, io.TextIOBase):
        dest.write(text)
    else:
        dest.write(text.encode("utf-8"))


# --------------------------------------------------------------------------
# Label catalog
# --------------------------------------------------------------------------


class Split(str, enum.Enum):
    TRAIN = "TRAIN"
    TEST = "TEST"


@dataclass(frozen=True)
class Label:
    label_id: int
    synonyms: tuple[str, ...]
    split: Split


@dataclass(frozen=True)
class Exclusion:
    label_id: int
    synonyms: tuple[str, ...]
    split: Split
    reason: str = "all synonyms out of vocabulary"


@dataclass(frozen=True)
class LabelCatalog:
    """Resolved labels plus the labels that were dropped during resolution.

    ``train_order`` is the declared TRAIN order (excluded labels included) and
    defines the index layout of classifier score vectors.
    """

    labels: tuple[Label, ...]
    excluded: tuple[Exclusion, ...] = ()
    train_order: tuple[int, ...] = ()

    def __post_init__(self):
        ids = [lab.label_id for lab in self.labels] + [ex.label_id for ex in self.excluded]
        if len(ids) != len(set(ids)):
            raise CatalogError("duplicate label_id")
        if not self.train_order:
            object.__setattr__(
                self,
                "train_order",
                tuple(lab.label_id for lab in self.labels if lab.split is Split.TRAIN),
            )
        object.__setattr__(self, "_by_id", {lab.label_id: lab for lab in self.labels})

    @property
    def train_ids(self) -> tuple[int, ...]:
        return tuple(lab.label_id for lab in self.labels if lab.split is Split.TRAIN)

    @property
    def test_ids(self) -> tuple[int, ...]:
        return tuple(lab.label_id for lab in self.labels if lab.split is Split.TEST)

    @property
    def n0(self) -> int:
        return len(self.train_order)

    @property
    def n1(self) -> int:
        return len(self.test_ids)

    def __contains__(self, label_id) -> bool:
        return label_id in self._by_id

    def __getitem__(self, label_id: int) -> Label:
        try:
            return self._by_id[label_id]
        except KeyError:
            raise UnresolvedLabelError(f"label {label_id} is not resolved in the catalog") from None

    def exclusion_report(self) -> list[dict]:
        return [
            {
                "label_id": ex.label_id,
                "split": ex.split.value,
                "synonyms": list(ex.synonyms),
                "reason": ex.reason,
            }
            for ex in self.excluded
        ]


def read_label_map(source: Source) -> list[tuple[int, tuple[str, ...]]]:
    records = []
    seen = set()
    for lineno, line in _lines(source):
        if "\t" not in line:
            raise CatalogError(f"line {lineno}: expected 'label_id<TAB>synonyms'")
        raw_id, raw_syns = line.split("\t", 1)
        try:
            label_id = int(raw_id)
        except ValueError:
            raise CatalogError(f"line {lineno}: bad label_id {raw_id!r}") from None
        if label_id in seen:
            raise CatalogError(f"line {lineno}: duplicate label_id {label_id}")
        synonyms = tuple(s.strip() for s in raw_syns.split(",") if s.strip())
        if not synonyms:
            raise CatalogError(f"line {lineno}: label {label_id} has no synonyms")
        seen.add(label_id)
        records.append((label_id, synonyms))
    return records


def read_splits(source: Source) -> dict[int, Split]:
    splits: dict[int, Split] = {}
    for lineno, line in _lines(source):
        parts = line.split()
        if len(parts) != 2:
            raise CatalogError(f"line {lineno}: expected 'label_id TRAIN|TEST'")
        try:
            label_id, split = int(parts[0]), Split(parts[1])
        except ValueError:
            raise CatalogError(f"line {lineno}: bad split record {line!r}") from None
        if label_id in splits:
            raise CatalogError(f"line {lineno}: label {label_id} assigned twice")
        splits[label_id] = split
    return splits


def resolve_catalog(
    records: Iterable[tuple[int, tuple[str, ...]]],
    splits: Mapping[int, Split],
    table: EmbeddingTable,
) -> LabelCatalog:
    records = list(records)
    known = {label_id for label_id, _ in records}
    unknown = sorted(set(splits) - known)
    if unknown:
        raise CatalogError(f"split assignment references unknown label ids {unknown}")
    missing = [label_id for label_id, _ in records if label_id not in splits]
    if missing:
        raise CatalogError(f"no split assignment for label ids {missing}")

    labels, excluded = [], []
    for label_id, synonyms in records:
        split = Split(splits[label_id])
        if any(s in table for s in synonyms):
            labels.append(Label(label_id, synonyms, split))
        else:
            excluded.append(Exclusion(label_id, synonyms, split))
            logger.warning("excluding label %d: no synonym in vocabulary %s", label_id, synonyms)
    train_order = tuple(
        label_id for label_id, _ in records if Split(splits[label_id]) is Split.TRAIN
    )
    return LabelCatalog(tuple(labels), tuple(excluded), train_order)


def load_catalog(label_map: Source, splits: Source, table: EmbeddingTable) -> LabelCatalog:
    """Read label map + split file and resolve synonyms against ``table``.

    Labels whose synonyms are all out of vocabulary are dropped and listed in
    ``catalog.excluded``.
    """
    return resolve_catalog(read_label_map(label_map), read_splits(splits), table)


def write_label_map(records: Iterable[tuple[int, Iterable[str]]], dest) -> None:
    text = "".join(f"{label_id}\t{','.join(syns)}\n" for label_id, syns in records)
    _write_text(dest, text)


def write_splits(splits: Iterable[tuple[int, Split]], dest) -> None:
    text = "".join(f"{label_id} {Split(split).value}\n" for label_id, split in splits)
    _write_text(dest, text)


# --------------------------------------------------------------------------
# Label embeddings
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LabelEmbedding:
    label_id: int
    mean_vector: np.ndarray
    word_vectors: np.ndarray
    terms: tuple[str, ...] = ()

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.mean_vector))


def _exact_mean(rows: np.ndarray) -> np.ndarray:
    # fsum per component keeps the mean independent of synonym order
    n = rows.shape[0]
    return np.array([math.fsum(col) / n for col in rows.T], dtype=np.float64)


def label_embedding(catalog: LabelCatalog, table: EmbeddingTable, label_id: int) -> LabelEmbedding:
    """Unweighted mean of the in-vocabulary synonym vectors of ``label_id``.

    The mean is deliberately left unnormalized; its norm carries confidence
    information downstream.
    """
    label = catalog[label_id]
    terms = tuple(dict.fromkeys(s for s in label.synonyms if s in table))
    if not terms:
        raise UnresolvedLabelError(f"label {label_id} has no in-vocabulary synonym")
    words = np.stack([table[t] for t in terms])
    mean = _exact_mean(words)
    words.setflags(write=False)
    mean.setflags(write=False)
    return LabelEmbedding(label_id, mean, words, terms)


def label_embeddings(catalog: LabelCatalog, table: EmbeddingTable) -> dict[int, LabelEmbedding]:
    return {lab.label_id: label_embedding(catalog, table, lab.label_id) for lab in catalog.labels}
