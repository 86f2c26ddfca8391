from pathlib import Path

import numpy as np
import pytest

from conse.embeddings import EmbeddingTable, Label, LabelCatalog, Split, label_embeddings
from conse.hierarchy import LabelHierarchy

GOLDEN = Path(__file__).parent / "data" / "golden"


@pytest.fixture
def golden():
    return GOLDEN


def random_label_embeddings(rng, label_ids, q, max_synonyms=3, split=Split.TRAIN):
    """Random unit word vectors, 1..max_synonyms per label, through the public API."""
    terms, vecs, labels = [], [], []
    for y in label_ids:
        n = int(rng.integers(1, max_synonyms + 1))
        names = [f"w{y}_{j}" for j in range(n)]
        terms += names
        vecs += [rng.standard_normal(q) for _ in names]
        labels.append(Label(int(y), tuple(names), split))
    table = EmbeddingTable.from_raw(terms, np.array(vecs))
    catalog = LabelCatalog(tuple(labels))
    return label_embeddings(catalog, table)


def random_tree(rng, n):
    return [(int(rng.integers(i)), i) for i in range(1, n)]


def floyd_warshall(h: LabelHierarchy):
    """All-pairs hop distances; np.inf where unreachable."""
    nodes = sorted(h.nodes)
    pos = {y: i for i, y in enumerate(nodes)}
    d = np.full((len(nodes), len(nodes)), np.inf)
    np.fill_diagonal(d, 0)
    for a, b in h.edges:
        d[pos[a], pos[b]] = d[pos[b], pos[a]] = 1
    for k in range(len(nodes)):
        d = np.minimum(d, d[:, k, None] + d[None, k, :])
    return nodes, pos, d


# -- acceptance reporting -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    state = {"name": request.node.name, "detail": ""}

    def note(name, detail=""):
        state["name"], state["detail"] = name, detail

    yield note
    outcome = getattr(request.node, "rep_call", None)
    ok = outcome is not None and outcome.passed
    line = f"[{'PASS' if ok else 'FAIL'}] {state['name']}"
    if state["detail"]:
        line += f"  ({state['detail']})"
    ACCEPTANCE_LINES.append(line)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
