"""Synthetic bundles with planted interpolation structure, and a slow reference oracle.

A bundle is a directory holding ``embeddings.txt``, ``labels.tsv``,
``splits.txt``, ``hierarchy.txt``, ``scores.jsonl`` and ``metadata.json``.
Training labels get ids ``0..n0-1`` and test labels ``n0..n0+n1-1``.

Planted test labels sit at the normalized mix ``w*m_a + (1-w)*m_b`` of two
training-label mean embeddings, and their images put mass ``w`` / ``1-w`` on
exactly those two labels (before noise), the way a lion/tiger classifier
output should land on "liger".
"""

from __future__ import annotations

import functools
import itertools
import json
import math
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import mpmath
import numpy as np

from .core import RankedPrediction, ScoreRecord, load_scores, write_scores
from .embeddings import EmbeddingTable, Split, write_embeddings, write_label_map, write_splits
from .errors import (
    DegenerateDistributionError,
    EmptyCandidateSetError,
    UnresolvedLabelError,
    ZeroConseVectorError,
)
from .evaluation import Assets, CandidateMode
from .hierarchy import write_hierarchy

GENERATOR = "numpy.random.Generator(PCG64)"
FORMAT_VERSION = 1

EMBEDDINGS = "embeddings.txt"
LABELS = "labels.tsv"
SPLITS = "splits.txt"
HIERARCHY = "hierarchy.txt"
SCORES = "scores.jsonl"
METADATA = "metadata.json"
BUNDLE_FILES = (EMBEDDINGS, LABELS, SPLITS, HIERARCHY, SCORES, METADATA)


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    q: int = 16
    n0: int = 8
    n1: int = 6
    clusters: int = 3
    spread: float = 0.6
    temperature: float = 0.1
    noise: float = 0.0
    plant_fraction: float = 1.0
    plant_weight: Optional[float] = None
    images_per_label: int = 3
    max_synonyms: int = 2
    oov_fraction: float = 0.0

    def __post_init__(self):
        for name in ("q", "n0", "n1", "clusters", "images_per_label", "max_synonyms"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.q < 2:
            raise ValueError("q must be at least 2")
        if not 0 < self.spread < math.pi / 2:
            raise ValueError("spread must be in (0, pi/2)")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        for name in ("noise", "plant_fraction", "oov_fraction"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.plant_weight is not None and not 0 < self.plant_weight < 1:
            raise ValueError("plant_weight must be in (0, 1)")
        if self.plant_fraction > 0 and self.n0 < 2:
            raise ValueError("planting needs at least 2 training labels")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _tilt(rng: np.random.Generator, u: np.ndarray, max_angle: float) -> np.ndarray:
    """Unit vector at a random angle in [0, max_angle) from unit vector ``u``."""
    g = rng.standard_normal(u.shape[0])
    w = g - (g @ u) * u
    w = _unit(w)
    angle = rng.uniform(0.0, max_angle)
    return _unit(math.cos(angle) * u + math.sin(angle) * w)


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def generate(config: SynthConfig, out_dir) -> Path:
    """Write a bundle for ``config`` into ``out_dir``; same seed gives identical bytes.

    The number of planted labels is ``round(plant_fraction * n1)`` capped at the
    number of distinct training-label pairs, so no two planted labels share
    parents.
    """
    rng = np.random.Generator(np.random.PCG64(config.seed))
    q, n0, n1 = config.q, config.n0, config.n1
    clusters = min(config.clusters, n0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    centers = [_unit(rng.standard_normal(q)) for _ in range(clusters)]
    terms: list[str] = []
    vectors: list[np.ndarray] = []
    synonyms: dict[int, list[str]] = {}
    direction: dict[int, np.ndarray] = {}
    cluster_of: dict[int, int] = {}

    def add_synonyms(label_id: int, prefix: str, base: np.ndarray, in_vocab: bool = True):
        n_syn = int(rng.integers(1, config.max_synonyms + 1))
        names = []
        for j in range(n_syn):
            name = f"{prefix}{label_id}_{j}"
            vec = _tilt(rng, base, config.spread / 4)
            if in_vocab:
                terms.append(name)
                vectors.append(vec)
            names.append(name)
        synonyms[label_id] = names

    for i in range(n0):
        c = i % clusters
        cluster_of[i] = c
        direction[i] = _tilt(rng, centers[c], config.spread)
        add_synonyms(i, "train", direction[i])

    # means as the loader will see them: average of unit word vectors
    word = dict(zip(terms, vectors))
    means = {i: np.mean([word[t] for t in synonyms[i]], axis=0) for i in range(n0)}

    pairs = list(itertools.combinations(range(n0), 2))
    n_planted = min(int(round(config.plant_fraction * n1)), len(pairs))
    chosen = rng.choice(len(pairs), size=n_planted, replace=False) if n_planted else []
    planted = []
    test_ids = list(range(n0, n0 + n1))
    for label_id, pair_idx in zip(test_ids[:n_planted], chosen):
        a, b = pairs[int(pair_idx)]
        w = config.plant_weight if config.plant_weight is not None else rng.uniform(0.3, 0.7)
        w = float(w)
        vec = _unit(w * means[a] + (1 - w) * means[b])
        name = f"planted{label_id}"
        terms.append(name)
        vectors.append(vec)
        synonyms[label_id] = [name]
        direction[label_id] = vec
        cluster_of[label_id] = cluster_of[a]
        planted.append({"label_id": label_id, "parents": [a, b], "weight": w})

    rest = test_ids[n_planted:]
    n_oov = int(round(config.oov_fraction * len(rest)))
    oov = set(rest[len(rest) - n_oov :]) if n_oov else set()
    for label_id in rest:
        c = int(rng.integers(clusters))
        cluster_of[label_id] = c
        direction[label_id] = _tilt(rng, centers[c], config.spread)
        add_synonyms(label_id, "test", direction[label_id], in_vocab=label_id not in oov)

    # hierarchy: one head per cluster, heads hang off cluster 0's head
    edges = []
    members: dict[int, list[int]] = {c: [] for c in range(clusters)}
    for i in range(n0):
        c = cluster_of[i]
        if members[c]:
            edges.append((members[c][int(rng.integers(len(members[c])))], i))
        elif c > 0:
            edges.append((members[0][0], i))
        members[c].append(i)
    for p in planted:
        edges.append((p["parents"][0], p["label_id"]))
        members[cluster_of[p["label_id"]]].append(p["label_id"])
    for label_id in rest:
        c = cluster_of[label_id]
        edges.append((members[c][int(rng.integers(len(members[c])))], label_id))
        members[c].append(label_id)

    train_dirs = np.stack([means[i] for i in range(n0)])
    train_dirs = train_dirs / np.linalg.norm(train_dirs, axis=1)[:, None]
    records = []
    planted_by_id = {p["label_id"]: p for p in planted}
    for label_id in test_ids:
        for j in range(config.images_per_label):
            if label_id in planted_by_id:
                p = planted_by_id[label_id]
                a, b = p["parents"]
                probs = np.zeros(n0)
                probs[a], probs[b] = p["weight"], 1 - p["weight"]
                if config.noise > 0:
                    probs = (1 - config.noise) * probs + config.noise * rng.dirichlet(np.ones(n0))
            else:
                logits = train_dirs @ direction[label_id]
                if config.noise > 0:
                    logits = logits + config.noise * rng.standard_normal(n0)
                probs = _softmax(logits / config.temperature)
            records.append(
                ScoreRecord(f"img{label_id:05d}_{j}", probs / probs.sum(), tuple(range(n0)), label_id)
            )

    table = EmbeddingTable(tuple(terms), np.stack(vectors))
    write_embeddings(table, out / EMBEDDINGS)
    write_label_map([(i, synonyms[i]) for i in range(n0 + n1)], out / LABELS)
    write_splits(
        [(i, Split.TRAIN if i < n0 else Split.TEST) for i in range(n0 + n1)], out / SPLITS
    )
    write_hierarchy(edges, out / HIERARCHY)
    write_scores(records, out / SCORES)
    meta = {
        "format_version": FORMAT_VERSION,
        "generator": GENERATOR,
        "config": asdict(config),
        "train_ids": list(range(n0)),
        "test_ids": test_ids,
        "planted": planted,
        "oov_labels": sorted(oov),
    }
    (out / METADATA).write_bytes((json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    return out


def write_liger_fixture(out_dir) -> Path:
    """Two orthogonal training labels (lion, tiger) and their midpoint test label (liger)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    h = 1 / math.sqrt(2)
    table = EmbeddingTable(
        ("lion", "tiger", "liger"), np.array([[1.0, 0.0], [0.0, 1.0], [h, h]])
    )
    write_embeddings(table, out / EMBEDDINGS)
    write_label_map([(0, ["lion"]), (1, ["tiger"]), (2, ["liger"])], out / LABELS)
    write_splits([(0, Split.TRAIN), (1, Split.TRAIN), (2, Split.TEST)], out / SPLITS)
    write_hierarchy([(0, 2), (1, 2)], out / HIERARCHY)
    write_scores([ScoreRecord("liger_img", [0.5, 0.5], (0, 1), 2)], out / SCORES)
    meta = {
        "format_version": FORMAT_VERSION,
        "generator": None,
        "config": None,
        "train_ids": [0, 1],
        "test_ids": [2],
        "planted": [{"label_id": 2, "parents": [0, 1], "weight": 0.5}],
        "oov_labels": [],
    }
    (out / METADATA).write_bytes((json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())
    return out


def load_bundle(root) -> tuple[Assets, list[ScoreRecord]]:
    root = Path(root)
    assets = Assets.load(root / EMBEDDINGS, root / LABELS, root / SPLITS, root / HIERARCHY)
    return assets, load_scores(root / SCORES, assets.catalog.train_order)


def read_metadata(root) -> dict:
    return json.loads((Path(root) / METADATA).read_text())


# --------------------------------------------------------------------------
# Reference oracle
# --------------------------------------------------------------------------

ORACLE_DPS = 40


@dataclass(frozen=True)
class _OracleData:
    words: dict  # term -> list[mpf], unit norm
    synonyms: dict  # label_id -> list[str]
    train: list  # declared train order
    test: list
    scores: dict  # image_id -> list[float]


def _stamp(root: Path):
    return tuple(os.stat(root / f).st_mtime_ns for f in (EMBEDDINGS, LABELS, SPLITS, SCORES))


@functools.lru_cache(maxsize=64)
def _oracle_data(root: str, stamp) -> _OracleData:
    with mpmath.workdps(ORACLE_DPS):
        lines = Path(root, EMBEDDINGS).read_text().splitlines()
        words = {}
        for line in lines[1:]:
            parts = line.split()
            vec = [mpmath.mpf(x) for x in parts[1:]]
            norm = mpmath.sqrt(mpmath.fsum(x * x for x in vec))
            words[parts[0]] = [x / norm for x in vec]
    synonyms = {}
    for line in Path(root, LABELS).read_text().splitlines():
        raw_id, raw = line.split("\t")
        synonyms[int(raw_id)] = [s for s in raw.split(",") if s]
    train, test = [], []
    for line in Path(root, SPLITS).read_text().splitlines():
        label_id, split = line.split()
        (train if split == "TRAIN" else test).append(int(label_id))
    scores = {}
    for line in Path(root, SCORES).read_text().splitlines():
        obj = json.loads(line)
        scores[obj["image_id"]] = obj["scores"]
    return _OracleData(words, synonyms, train, test, scores)


def oracle_conse(
    bundle,
    image_id: str,
    T: int,
    candidate_mode: CandidateMode = CandidateMode.TEST_ONLY,
    scale: float = 1.0,
) -> RankedPrediction:
    """Naive extended-precision ranking: full sort, mpmath sums, exhaustive cosine scan.

    ``scale`` multiplies every score before use (the combination is
    scale-free, so the ranking must not move).
    """
    root = Path(bundle)
    data = _oracle_data(str(root.resolve()), _stamp(root))
    with mpmath.workdps(ORACLE_DPS):
        resolved = {
            y: [data.words[t] for t in dict.fromkeys(syns) if t in data.words]
            for y, syns in data.synonyms.items()
        }
        resolved = {y: ws for y, ws in resolved.items() if ws}

        probs = [mpmath.mpf(p) * scale for p in data.scores[image_id]]
        pairs = sorted(zip(probs, data.train), key=lambda pair: (-pair[0], pair[1]))
        support = [(p, y) for p, y in pairs if p > 0][:T]
        if not support:
            raise DegenerateDistributionError(image_id)
        z = mpmath.fsum(p for p, _ in support)
        q = len(next(iter(data.words.values())))
        f = [mpmath.mpf(0)] * q
        for p, y in support:
            if y not in resolved:
                raise UnresolvedLabelError(y)
            ws = resolved[y]
            for d in range(q):
                f[d] += (p / z) * mpmath.fsum(w[d] for w in ws) / len(ws)
        fnorm = mpmath.sqrt(mpmath.fsum(x * x for x in f))
        if fnorm == 0:
            raise ZeroConseVectorError(image_id)

        candidates = [y for y in data.test if y in resolved]
        if CandidateMode(candidate_mode) is CandidateMode.PLUS_TRAIN:
            candidates += [y for y in data.train if y in resolved]
        if not candidates:
            raise EmptyCandidateSetError(image_id)
        scored = []
        for y in candidates:
            best = None
            for w in resolved[y]:
                wnorm = mpmath.sqrt(mpmath.fsum(x * x for x in w))
                cos = mpmath.fsum(a * b for a, b in zip(f, w)) / (fnorm * wnorm)
                if best is None or cos > best:
                    best = cos
            scored.append((best, y))
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        ranked = tuple((y, float(s)) for s, y in scored)
        return RankedPrediction(
            image_id, ranked, np.array([float(x) for x in f]), float(fnorm)
        )
