import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conse.core import (
    CandidateIndex,
    ConseVector,
    ScoreRecord,
    conse_embed,
    load_scores,
    precompute_top1_lists,
    rank_candidates,
    scale_scores,
    top_t,
    write_scores,
)
from conse.embeddings import EmbeddingTable, Label, LabelCatalog, Split, label_embeddings
from conse.errors import (
    DegenerateDistributionError,
    EmptyCandidateSetError,
    ScoreFormatError,
    UnresolvedLabelError,
    ZeroConseVectorError,
)

from conftest import random_label_embeddings

# -- independent oracles ------------------------------------------------------


def oracle_top_t(scores, ids, T):
    pairs = [(float(p), int(y)) for p, y in zip(scores, ids) if p > 0]
    pairs.sort(key=lambda t: (-t[0], t[1]))
    return [(y, p) for p, y in pairs[:T]]


def oracle_combination(scores, ids, T, embeddings):
    with mpmath.workdps(40):
        support = oracle_top_t(scores, ids, T)
        z = mpmath.fsum(mpmath.mpf(p) for _, p in support)
        q = len(next(iter(embeddings.values())).mean_vector)
        f = [mpmath.mpf(0)] * q
        for y, p in support:
            for d in range(q):
                f[d] += mpmath.mpf(p) / z * mpmath.mpf(embeddings[y].mean_vector[d])
        return np.array([float(x) for x in f])


def oracle_rank(f, candidates, embeddings):
    fnorm = math.sqrt(math.fsum(x * x for x in f))
    scored = []
    for y in candidates:
        best = -math.inf
        for w in embeddings[y].word_vectors:
            wnorm = math.sqrt(math.fsum(x * x for x in w))
            best = max(best, math.fsum(a * b for a, b in zip(f, w)) / (fnorm * wnorm))
        scored.append((best, y))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [(y, s) for s, y in scored]


def two_d(vectors):
    """LabelEmbeddings for {label_id: [word vectors]} in the given raw coordinates."""
    terms, rows, labels = [], [], []
    for y, words in vectors.items():
        names = [f"l{y}w{j}" for j in range(len(words))]
        terms += names
        rows += words
        labels.append(Label(y, tuple(names), Split.TRAIN))
    table = EmbeddingTable.from_raw(terms, np.array(rows, dtype=float))
    return label_embeddings(LabelCatalog(tuple(labels)), table)


# -- ScoreRecord ----------------------------------------------------------------


@pytest.mark.parametrize(
    "scores", [[0.5, 0.4], [0.7, -0.1, 0.4], [float("nan"), 1.0], [1.0, float("inf")]]
)
def test_bad_records_rejected(scores):
    with pytest.raises(ScoreFormatError):
        ScoreRecord("x", scores, tuple(range(len(scores))))


def test_sum_tolerance():
    ScoreRecord("x", [0.5, 0.50009], (0, 1))
    with pytest.raises(ScoreFormatError):
        ScoreRecord("x", [0.5, 0.5002], (0, 1))


def test_score_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    recs = [ScoreRecord(f"i{j}", rng.dirichlet(np.ones(6)), tuple(range(6)), 10 + j) for j in range(5)]
    write_scores(recs, tmp_path / "s.jsonl")
    again = load_scores(tmp_path / "s.jsonl", tuple(range(6)))
    for a, b in zip(recs, again):
        assert a.image_id == b.image_id and a.true_label == b.true_label
        assert a.scores.tobytes() == b.scores.tobytes()


def test_score_file_wrong_length(tmp_path):
    (tmp_path / "s.jsonl").write_text('{"image_id": "a", "scores": [1.0]}\n')
    with pytest.raises(ScoreFormatError):
        load_scores(tmp_path / "s.jsonl", (0, 1))


# -- top_t ------------------------------------------------------------------------


def test_top1_lion_tiger():
    rec = ScoreRecord("x", [0.6, 0.4], (0, 1))  # 0 = lion, 1 = tiger
    assert top_t(rec, 1) == [(0, 0.6)]


def test_tie_goes_to_smaller_id():
    rec = ScoreRecord("x", [0.5, 0.5], (9, 3))
    assert top_t(rec, 1) == [(3, 0.5)]


def test_zero_probabilities_never_included():
    rec = ScoreRecord("x", [0.0, 1.0, 0.0], (0, 1, 2))
    assert top_t(rec, 3) == [(1, 1.0)]


def test_all_zero_guarded():
    rec = ScoreRecord("x", [0.0, 0.0], (0, 1), probabilistic=False)
    with pytest.raises(DegenerateDistributionError):
        top_t(rec, 1)


@pytest.mark.parametrize("T", [0, 3])
def test_T_out_of_range(T):
    with pytest.raises(ValueError):
        top_t(ScoreRecord("x", [0.6, 0.4], (0, 1)), T)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_top_t_matches_sort_oracle(seed, T):
    rng = np.random.default_rng(seed)
    scores = rng.dirichlet(np.ones(10))
    # force some ties and zeros
    scores[rng.integers(10)] = 0.0
    scores[1] = scores[2]
    scores /= scores.sum()
    ids = tuple(int(i) for i in rng.permutation(10) + 100)
    rec = ScoreRecord("x", scores, ids)
    assert top_t(rec, T) == oracle_top_t(rec.scores, ids, T)


def test_full_simplex_sorted():
    rng = np.random.default_rng(11)
    rec = ScoreRecord("x", rng.dirichlet(np.ones(10)), tuple(range(10)))
    out = top_t(rec, 10)
    assert [y for y, _ in out] == [y for y, _ in oracle_top_t(rec.scores, range(10), 10)]
    assert len(out) == 10


# -- conse_embed --------------------------------------------------------------------


def test_lion_tiger_mix():
    embs = two_d({0: [[1, 0]], 1: [[0, 1]]})
    v = conse_embed(ScoreRecord("x", [0.6, 0.4], (0, 1)), 2, embs)
    assert v.vector.tolist() == [0.6, 0.4]
    assert v.support == ((0, 0.6), (1, 0.4))


def test_confident_classifier_identity():
    rng = np.random.default_rng(2)
    embs = random_label_embeddings(rng, range(5), 8)
    v = conse_embed(ScoreRecord("x", [0, 0, 1.0, 0, 0], tuple(range(5))), 5, embs)
    assert v.vector.tobytes() == embs[2].mean_vector.tobytes()


def test_uniform_gives_componentwise_mean():
    rng = np.random.default_rng(3)
    embs = random_label_embeddings(rng, range(4), 6)
    v = conse_embed(ScoreRecord("x", [0.25] * 4, tuple(range(4))), 4, embs)
    expected = np.mean([embs[y].mean_vector for y in range(4)], axis=0)
    np.testing.assert_allclose(v.vector, expected, rtol=0, atol=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_embed_matches_extended_precision_oracle(seed):
    rng = np.random.default_rng(seed)
    ids = tuple(range(8))
    embs = random_label_embeddings(rng, ids, 10)
    rec = ScoreRecord("x", rng.dirichlet(np.ones(8)), ids)
    v = conse_embed(rec, 3, embs)
    np.testing.assert_allclose(v.vector, oracle_combination(rec.scores, ids, 3, embs), atol=1e-9)


def test_missing_training_embedding():
    embs = two_d({0: [[1, 0]]})
    with pytest.raises(UnresolvedLabelError):
        conse_embed(ScoreRecord("x", [0.4, 0.6], (0, 1)), 2, embs)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(1, 12), st.integers(2, 10))
def test_convex_hull_and_norm_bound(seed, n0, T, q):
    T = min(T, n0)
    rng = np.random.default_rng(seed)
    ids = tuple(range(n0))
    embs = random_label_embeddings(rng, ids, q)
    scores = rng.dirichlet(np.ones(n0) * 0.3)
    v = conse_embed(ScoreRecord("x", scores, ids), T, embs)
    weights = [w for _, w in v.support]
    assert all(0 <= w <= 1 for w in weights)
    assert abs(math.fsum(weights) - 1) <= 1e-9
    assert len(v.support) == min(T, int(np.count_nonzero(scores > 0)))
    combo = sum(w * embs[y].mean_vector for y, w in v.support)
    np.testing.assert_allclose(v.vector, combo, rtol=0, atol=1e-9)
    bound = math.fsum(w * embs[y].norm for y, w in v.support)
    assert v.norm <= bound + 1e-12
    assert v.norm <= 1 + 1e-9


# -- scale_scores ---------------------------------------------------------------------


def test_scale_identity():
    rec = ScoreRecord("x", [0.6, 0.4], (0, 1))
    assert scale_scores(rec, 1).scores.tolist() == [0.6, 0.4]


def test_scale_by_two():
    rec = scale_scores(ScoreRecord("x", [0.6, 0.4], (0, 1)), 2)
    assert rec.scores.tolist() == [1.2, 0.8]
    assert rec.probabilistic is False


@pytest.mark.parametrize("c", [0, -1.0])
def test_scale_must_be_positive(c):
    with pytest.raises(ValueError):
        scale_scores(ScoreRecord("x", [0.6, 0.4], (0, 1)), c)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.integers(1, 8))
def test_scaled_scores_rank_identically(seed, c, T):
    rng = np.random.default_rng(seed)
    embs = random_label_embeddings(rng, range(20), 8)
    train = tuple(range(8))
    rec = ScoreRecord("x", rng.dirichlet(np.ones(8)), train)
    index = CandidateIndex.build(range(8, 20), embs)
    a = index.rank(conse_embed(rec, T, embs))
    b = index.rank(conse_embed(scale_scores(rec, c), T, embs))
    assert a.labels == b.labels


# -- ranking ------------------------------------------------------------------------------


def test_self_cosine_ranks_first():
    rng = np.random.default_rng(4)
    embs = random_label_embeddings(rng, range(10), 6, max_synonyms=1)
    target = embs[7].word_vectors[0]
    v = ConseVector("x", target, float(np.linalg.norm(target)), ())
    pred = rank_candidates(v, range(3, 10), embs)
    assert pred.labels[0] == 7
    assert abs(pred.ranked[0][1] - 1.0) <= 1e-9


def test_liger_geometry():
    h = 1 / math.sqrt(2)
    embs = two_d({0: [[1, 0]], 1: [[0, 1]], 2: [[h, h]]})
    v = conse_embed(ScoreRecord("x", [0.5, 0.5], (0, 1)), 2, embs)
    pred = rank_candidates(v, [2], embs)
    assert pred.labels == (2,)
    assert abs(pred.ranked[0][1] - 1.0) <= 1e-9
    plus = rank_candidates(v, [0, 1, 2], embs)
    assert plus.labels == (2, 0, 1)


def test_best_synonym_wins():
    embs = two_d({5: [[0, 1], [1, 0]], 6: [[1, 1]]})
    v = ConseVector("x", np.array([1.0, 0.0]), 1.0, ())
    pred = rank_candidates(v, [5, 6], embs)
    assert pred.labels == (5, 6)
    assert pred.ranked[0][1] == 1.0


def test_equal_scores_tie_by_id():
    embs = two_d({3: [[1, 0]], 2: [[1, 0]], 1: [[0, 1]]})
    v = ConseVector("x", np.array([1.0, 0.2]), float(np.hypot(1, 0.2)), ())
    assert rank_candidates(v, [3, 2, 1], embs).labels == (2, 3, 1)


def test_zero_vector_and_empty_candidates():
    embs = two_d({0: [[1, 0]], 1: [[0, 1]]})
    with pytest.raises(ZeroConseVectorError):
        rank_candidates(ConseVector("x", np.zeros(2), 0.0, ()), [0], embs)
    with pytest.raises(EmptyCandidateSetError):
        rank_candidates(ConseVector("x", np.ones(2), math.sqrt(2), ()), [], embs)
    with pytest.raises(UnresolvedLabelError):
        rank_candidates(ConseVector("x", np.ones(2), math.sqrt(2), ()), [7], embs)


def test_cancelling_embeddings_give_zero_vector():
    embs = two_d({0: [[1, 0]], 1: [[-1, 0]], 2: [[0, 1]]})
    v = conse_embed(ScoreRecord("x", [0.5, 0.5], (0, 1)), 2, embs)
    assert v.norm == 0.0
    with pytest.raises(ZeroConseVectorError):
        rank_candidates(v, [2], embs)


@pytest.mark.parametrize("seed", range(25))
def test_rank_matches_all_pairs_oracle(seed):
    rng = np.random.default_rng(seed)
    embs = random_label_embeddings(rng, range(28), 12)
    rec = ScoreRecord("x", rng.dirichlet(np.ones(8)), tuple(range(8)))
    v = conse_embed(rec, 4, embs)
    candidates = list(range(8, 28))
    pred = rank_candidates(v, candidates, embs)
    expected = oracle_rank(v.vector, candidates, embs)
    assert list(pred.labels) == [y for y, _ in expected]
    np.testing.assert_allclose(pred.scores, [s for _, s in expected], rtol=0, atol=1e-9)
    assert sorted(pred.labels) == candidates
    assert all(a >= b for a, b in zip(pred.scores, pred.scores[1:]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_truncated_ranking_is_prefix(seed, top):
    rng = np.random.default_rng(seed)
    embs = random_label_embeddings(rng, range(30), 4)
    # duplicate a vector to create exact ties near the cut
    index = CandidateIndex.build(range(30), embs)
    vec = rng.standard_normal(4)
    v = ConseVector("x", vec, float(np.linalg.norm(vec)), ())
    full = index.rank(v)
    assert index.rank(v, top=top).ranked == full.ranked[:top]


def test_truncated_ranking_with_ties():
    embs = two_d({y: [[1, 0]] for y in range(6)})
    index = CandidateIndex.build(range(6), embs)
    v = ConseVector("x", np.array([1.0, 0.0]), 1.0, ())
    assert index.rank(v, top=3).labels == (0, 1, 2)


def test_word_level_ranking_exposed():
    embs = two_d({5: [[0, 1], [1, 0]], 6: [[1, 1]]})
    index = CandidateIndex.build([5, 6], embs)
    words = index.rank_words(ConseVector("x", np.array([1.0, 0.0]), 1.0, ()))
    assert [(y, t) for y, t, _ in words] == [(5, "l5w1"), (6, "l6w0"), (5, "l5w0")]


def test_top1_reduction_matches_precomputed_lists():
    rng = np.random.default_rng(8)
    embs = random_label_embeddings(rng, range(20), 6)
    train = tuple(range(8))
    index = CandidateIndex.build(range(8, 20), embs)
    lists = precompute_top1_lists(train, embs, index)
    for seed in range(30):
        rec = ScoreRecord("x", np.random.default_rng(seed).dirichlet(np.ones(8)), train)
        v = conse_embed(rec, 1, embs)
        best = int(np.argmax(rec.scores))
        assert v.vector.tobytes() == embs[best].mean_vector.tobytes()
        assert index.rank(v).labels == lists[best].labels


def test_ranking_is_deterministic():
    rng = np.random.default_rng(9)
    embs = random_label_embeddings(rng, range(40), 16)
    rec = ScoreRecord("x", rng.dirichlet(np.ones(10)), tuple(range(10)))
    runs = [rank_candidates(conse_embed(rec, 5, embs), range(10, 40), embs) for _ in range(3)]
    assert runs[0].ranked == runs[1].ranked == runs[2].ranked
    assert repr(runs[0].ranked) == repr(runs[2].ranked)


def test_batch_rank_equals_single():
    rng = np.random.default_rng(10)
    embs = random_label_embeddings(rng, range(30), 8)
    index = CandidateIndex.build(range(10, 30), embs)
    vs = [
        conse_embed(ScoreRecord(str(j), rng.dirichlet(np.ones(10)), tuple(range(10))), 3, embs)
        for j in range(12)
    ]
    batch = index.rank_many(vs)
    assert [p.ranked for p in batch] == [index.rank(v).ranked for v in vs]
