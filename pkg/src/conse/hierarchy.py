"""Label is-a hierarchy treated as an undirected graph of hop distances."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

from .embeddings import Source, _lines, _write_text
from .errors import HierarchyError


@dataclass(frozen=True)
class LabelHierarchy:
    """Undirected graph over label ids.

    Edges are stored as the declared ``(parent, child)`` pairs with duplicates
    (in either direction) collapsed, so DAG inputs with several parents are
    fine. Use :meth:`from_edges` rather than the raw constructor.
    """

    nodes: frozenset
    edges: tuple[tuple[int, int], ...]
    adjacency: dict

    @classmethod
    def from_edges(
        cls, edges: Iterable[tuple[int, int]], nodes: Iterable[int] = ()
    ) -> "LabelHierarchy":
        adjacency: dict[int, set] = {int(n): set() for n in nodes}
        kept = []
        for parent, child in edges:
            parent, child = int(parent), int(child)
            if parent == child:
                raise HierarchyError(f"self-loop on {parent}")
            adjacency.setdefault(parent, set())
            adjacency.setdefault(child, set())
            if child in adjacency[parent]:
                continue
            adjacency[parent].add(child)
            adjacency[child].add(parent)
            kept.append((parent, child))
        frozen = {n: frozenset(nb) for n, nb in adjacency.items()}
        return cls(frozenset(frozen), tuple(kept), frozen)

    def __contains__(self, node) -> bool:
        return node in self.adjacency

    def neighbors(self, node: int) -> frozenset:
        self._check(node)
        return self.adjacency[node]

    def _check(self, node) -> None:
        if node not in self.adjacency:
            raise HierarchyError(f"unknown node {node}")

    def distances_from(
        self, sources: Iterable[int], max_hops: Optional[int] = None
    ) -> dict[int, int]:
        """Multi-source BFS: hop count from the nearest source to each reachable node."""
        dist: dict[int, int] = {}
        queue: deque = deque()
        for s in sources:
            self._check(s)
            if s not in dist:
                dist[s] = 0
                queue.append(s)
        while queue:
            node = queue.popleft()
            d = dist[node]
            if max_hops is not None and d >= max_hops:
                continue
            for nb in self.adjacency[node]:
                if nb not in dist:
                    dist[nb] = d + 1
                    queue.append(nb)
        return dist

    def components(self) -> list[frozenset]:
        """Connected components, largest first (ties by smallest member)."""
        seen: set = set()
        comps = []
        for node in sorted(self.adjacency):
            if node in seen:
                continue
            comp = frozenset(self.distances_from([node]))
            seen |= comp
            comps.append(comp)
        comps.sort(key=lambda c: (-len(c), min(c)))
        return comps

    def disconnected(self, labels: Iterable[int]) -> list[int]:
        """Labels outside the component that holds most of ``labels``.

        Labels missing from the graph altogether are reported too.
        """
        labels = set(labels)
        missing = labels - self.nodes
        present = labels - missing
        if not present:
            return sorted(missing)
        best = max(self.components(), key=lambda c: (len(c & present), -min(c)))
        return sorted((present - best) | missing)


def hop_distance(h: LabelHierarchy, a: int, b: int) -> Optional[int]:
    """Shortest undirected path length, or ``None`` if ``b`` is unreachable."""
    h._check(a)
    h._check(b)
    if a == b:
        return 0
    dist = {a: 0}
    queue = deque([a])
    while queue:
        node = queue.popleft()
        for nb in h.adjacency[node]:
            if nb not in dist:
                if nb == b:
                    return dist[node] + 1
                dist[nb] = dist[node] + 1
                queue.append(nb)
    return None


def hop_candidate_set(
    h: LabelHierarchy,
    train_labels: Iterable[int],
    test_labels: Iterable[int],
    max_hops: Optional[int],
) -> set[int]:
    """Test labels within ``max_hops`` of some training label (``None`` = any distance)."""
    train_labels = list(train_labels)
    if not train_labels:
        raise ValueError("training label set is empty")
    if max_hops is not None and max_hops < 1:
        raise ValueError(f"max_hops must be >= 1, got {max_hops}")
    dist = h.distances_from(train_labels, max_hops)
    return {y for y in test_labels if y in dist}


def relevance_set(h: LabelHierarchy, true_label: int, k: int, universe: Iterable[int]) -> set[int]:
    """Universe labels closest to ``true_label``, growing radius until at least ``k``.

    Every label at the final radius is kept, so the result can exceed ``k``.
    Labels unreachable from ``true_label`` sit at infinite radius.
    """
    universe = set(universe)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if true_label not in universe:
        raise ValueError(f"true label {true_label} not in universe")
    if len(universe) < k:
        raise ValueError(f"universe has {len(universe)} labels, fewer than k={k}")
    return relevance_from_distances(h.distances_from([true_label]), k, universe)


def relevance_from_distances(dist: dict[int, int], k: int, universe: set) -> set[int]:
    by_radius: dict[int, list[int]] = {}
    for node, d in dist.items():
        if node in universe:
            by_radius.setdefault(d, []).append(node)
    result: set[int] = set()
    for radius in sorted(by_radius):
        result.update(by_radius[radius])
        if len(result) >= k:
            return result
    return set(universe)


def load_hierarchy(source: Source, nodes: Iterable[int] = ()) -> LabelHierarchy:
    edges = []
    for lineno, line in _lines(source):
        parts = line.split()
        if len(parts) != 2:
            raise HierarchyError(f"line {lineno}: expected 'parent_id child_id'")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise HierarchyError(f"line {lineno}: non-integer id in {line!r}") from None
    return LabelHierarchy.from_edges(edges, nodes)


def write_hierarchy(edges: Iterable[tuple[int, int]], dest) -> None:
    _write_text(dest, "".join(f"{p} {c}\n" for p, c in edges))
