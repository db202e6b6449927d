"""Graph values, k-hop building blocks, gluing and node overlapping.

Nodes carry no identity beyond their position and their discrete feature
vector. Two nodes are "the same kind" iff their feature tuples are equal.
"""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

GRAPH_CLASSIFICATION = "graph_classification"
NODE_CLASSIFICATION = "node_classification"
TASKS = (GRAPH_CLASSIFICATION, NODE_CLASSIFICATION)

NodeFeatures = tuple  # tuple[int, ...] of category indices, one per schema feature


class GraphError(ValueError):
    """A graph violates one of its structural invariants."""


@dataclass(frozen=True)
class Feature:
    name: str
    cardinality: int

    def __post_init__(self):
        if int(self.cardinality) < 1:
            raise GraphError(f"feature {self.name!r}: cardinality must be >= 1")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered discrete node features; one feature encodes the node degree."""

    features: tuple[Feature, ...]
    degree_feature_index: int = 0
    num_classes: int = 2
    task: str = GRAPH_CLASSIFICATION

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not self.features:
            raise GraphError("schema needs at least one feature")
        if not 0 <= self.degree_feature_index < len(self.features):
            raise GraphError(
                f"degree_feature_index {self.degree_feature_index} out of range "
                f"for {len(self.features)} features")
        if self.num_classes < 1:
            raise GraphError("num_classes must be >= 1")
        if self.task not in TASKS:
            raise GraphError(f"unknown task {self.task!r}")

    @property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(f.cardinality for f in self.features)

    @property
    def width(self) -> int:
        """Total one-hot width (sum of cardinalities)."""
        return sum(self.cardinalities)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for c in self.cardinalities:
            out.append(acc)
            acc += c
        return tuple(out)

    @property
    def max_degree(self) -> int:
        return self.features[self.degree_feature_index].cardinality - 1

    def degree_of(self, values: Sequence[int]) -> int:
        return int(values[self.degree_feature_index])

    def check_node(self, values: Sequence[int], where: str = "node") -> NodeFeatures:
        values = tuple(int(v) for v in values)
        if len(values) != len(self.features):
            raise GraphError(
                f"{where}: expected {len(self.features)} feature values, got {len(values)}")
        for k, (v, f) in enumerate(zip(values, self.features)):
            if not 0 <= v < f.cardinality:
                raise GraphError(
                    f"{where}: feature {k} ({f.name}) value {v} outside [0, {f.cardinality})")
        return values

    def one_hot(self, nodes: Sequence[Sequence[int]]) -> np.ndarray:
        x = np.zeros((len(nodes), self.width))
        offs = np.asarray(self.offsets)
        for i, vals in enumerate(nodes):
            x[i, offs + np.asarray(vals, dtype=int)] = 1.0
        return x


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph with one feature tuple per node.

    ``edges`` is normalized to a frozenset of ``(i, j)`` with ``i < j``.
    Construction validates every invariant, including that no node has
    more neighbours than its degree feature declares.
    """

    nodes: tuple[NodeFeatures, ...]
    edges: frozenset
    schema: FeatureSchema = field(repr=False)

    def __post_init__(self):
        nodes = tuple(self.schema.check_node(v, f"node {i}") for i, v in enumerate(self.nodes))
        n = len(nodes)
        norm = set()
        for k, e in enumerate(self.edges):
            i, j = (int(e[0]), int(e[1]))
            if i == j:
                raise GraphError(f"edge {k} ({i}, {j}): self-edge")
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge {k} ({i}, {j}): endpoint out of range (n={n})")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", frozenset(norm))
        deg = [0] * n
        for i, j in norm:
            deg[i] += 1
            deg[j] += 1
        for i in range(n):
            if deg[i] > self.schema.degree_of(nodes[i]):
                raise GraphError(
                    f"node {i}: structural degree {deg[i]} exceeds declared degree "
                    f"{self.schema.degree_of(nodes[i])}")

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (self.nodes == other.nodes and self.edges == other.edges
                and self.schema == other.schema)

    def __hash__(self):
        return hash((self.nodes, self.edges))

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def adj(self) -> tuple[tuple[int, ...], ...]:
        nb = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return tuple(tuple(sorted(a)) for a in nb)

    def degree(self, i: int) -> int:
        return len(self.adj[i])

    def declared_degree(self, i: int) -> int:
        return self.schema.degree_of(self.nodes[i])

    def deficit(self, i: int) -> int:
        return self.declared_degree(i) - self.degree(i)

    def dangling(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.deficit(i) > 0)

    def one_hot(self) -> np.ndarray:
        return self.schema.one_hot(self.nodes)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel so that old node ``i`` becomes new node ``perm[i]``."""
        nodes = [None] * self.n
        for i, p in enumerate(perm):
            nodes[p] = self.nodes[i]
        edges = {(perm[i], perm[j]) for i, j in self.edges}
        return Graph(tuple(nodes), frozenset(edges), self.schema)

    def distances(self, source: int) -> list[int]:
        """BFS hop distances from ``source``; unreachable nodes get -1."""
        dist = [-1] * self.n
        dist[source] = 0
        q = deque([source])
        while q:
            u = q.popleft()
            for w in self.adj[u]:
                if dist[w] < 0:
                    dist[w] = dist[u] + 1
                    q.append(w)
        return dist


def make_graph(schema: FeatureSchema, nodes: Iterable[Sequence[int]],
               edges: Iterable[Sequence[int]] = ()) -> Graph:
    return Graph(tuple(tuple(v) for v in nodes), frozenset(tuple(e) for e in edges), schema)


@dataclass(frozen=True)
class BuildingBlock:
    """A hop-limited neighbourhood ``graph`` around node ``center``."""

    graph: Graph
    center: int
    hop: int

    def __post_init__(self):
        if not 0 <= self.center < self.graph.n:
            raise GraphError(f"center {self.center} out of range (n={self.graph.n})")
        if self.hop < 0:
            raise GraphError("hop must be non-negative")

    @property
    def center_features(self) -> NodeFeatures:
        return self.graph.nodes[self.center]


def k_hop_neighborhood(g: Graph, v: int, k: int) -> BuildingBlock:
    """The building block of radius ``k`` around ``v``.

    Keeps nodes within distance ``k`` and the edges with one endpoint within
    distance ``k - 1``; edges joining two nodes at distance exactly ``k`` are
    dropped. Nodes keep their relative order.
    """
    if not 0 <= v < g.n:
        raise IndexError(f"node {v} out of range (n={g.n})")
    if k < 0:
        raise ValueError("k must be non-negative")
    dist = g.distances(v)
    keep = [i for i in range(g.n) if 0 <= dist[i] <= k]
    index = {old: new for new, old in enumerate(keep)}
    edges = set()
    for i, j in g.edges:
        if i in index and j in index and min(dist[i], dist[j]) <= k - 1:
            edges.add((index[i], index[j]))
    sub = Graph(tuple(g.nodes[i] for i in keep), frozenset(edges), g.schema)
    return BuildingBlock(sub, index[v], k)


def k_hop_nodes(g: Graph, v: int, k: int) -> list[int]:
    """Original indices of the nodes kept by :func:`k_hop_neighborhood`."""
    dist = g.distances(v)
    return [i for i in range(g.n) if 0 <= dist[i] <= k]


def dangling_nodes(b: BuildingBlock | Graph) -> set[int]:
    """Nodes whose declared degree exceeds their number of neighbours."""
    g = b.graph if isinstance(b, BuildingBlock) else b
    return set(g.dangling())


# -- gluing ------------------------------------------------------------------

def _max_matching(compat: list[list[int]], n_right: int) -> tuple[int, list[int]]:
    """Kuhn's augmenting-path bipartite matching. Returns (size, right->left)."""
    owner = [-1] * n_right

    def augment(u, seen):
        for w in compat[u]:
            if not seen[w]:
                seen[w] = True
                if owner[w] < 0 or augment(owner[w], seen):
                    owner[w] = u
                    return True
        return False

    size = 0
    for u in range(len(compat)):
        if augment(u, [False] * n_right):
            size += 1
    return size, owner


class _Embedder:
    """Decides whether the non-backtracking unrolling of ``g`` around a node
    embeds (feature-preserving, injective per level) into that of ``b``."""

    def __init__(self, g: Graph, b: Graph, depth: int):
        self.g, self.b, self.depth = g, b, depth
        self.memo: dict = {}

    def children(self, x, px, y, py):
        gch = [u for u in self.g.adj[x] if u != px]
        bch = [w for w in self.b.adj[y] if w != py]
        return gch, bch

    def compat(self, x, px, y, py, d):
        gch, bch = self.children(x, px, y, py)
        return gch, bch, [[k for k, w in enumerate(bch) if self.fits(u, x, w, y, d + 1)]
                          for u in gch]

    def fits(self, x, px, y, py, d) -> bool:
        key = (x, px, y, py, d)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        ok = self.g.nodes[x] == self.b.nodes[y]
        if ok and d < self.depth:
            gch, bch = self.children(x, px, y, py)
            if len(gch) > len(bch):
                ok = False
            elif gch:
                _, _, comp = self.compat(x, px, y, py, d)
                ok = _max_matching(comp, len(bch))[0] == len(gch)
        self.memo[key] = ok
        return ok


def glue(g: Graph, b: BuildingBlock, c: int, l: int | None = None) -> list[Graph]:
    """All graphs obtained by gluing block ``b`` onto ``g`` at node ``c``.

    The neighbourhood of ``c`` in ``g`` (unrolled to depth ``l``) must embed
    into ``b`` with ``c`` on the block center. Block neighbours of the center
    left unmatched become new nodes attached to ``c``; they are appended after
    the existing nodes in sorted feature order. Returns ``[]`` when no
    consistent matching exists or when the result would break a degree bound.
    """
    l = b.hop if l is None else l
    if not 0 <= c < g.n:
        raise IndexError(f"node {c} out of range (n={g.n})")
    bg = b.graph
    emb = _Embedder(g, bg, max(l, 0))
    if not emb.fits(c, -1, b.center, -1, 0):
        return []
    if l == 0:
        return [g]
    gch, bch, comp = emb.compat(c, -1, b.center, -1, 0)
    _, owner = _max_matching(comp, len(bch))
    extra = sorted(bg.nodes[bch[k]] for k in range(len(bch)) if owner[k] < 0)
    if not extra:
        return [g]
    n = g.n
    nodes = g.nodes + tuple(extra)
    edges = set(g.edges) | {(c, n + k) for k in range(len(extra))}
    try:
        return [Graph(nodes, frozenset(edges), g.schema)]
    except GraphError:
        return []


def can_glue(g: Graph, b: BuildingBlock, c: int) -> bool:
    """True iff ``b`` is consistent with the neighbourhood of ``c`` in ``g``."""
    if g.nodes[c] != b.center_features:
        return False
    return bool(glue(g, b, c))


# -- overlapping -------------------------------------------------------------

def overlap(g: Graph, pairs: Iterable[tuple[int, int]]) -> Graph | None:
    """Merge the second node of each pair into the first.

    Returns ``None`` if a pair joins nodes with different features, a node is
    used twice, or the merged graph breaks a degree bound. Edges of a removed
    node are re-homed onto its partner; duplicates and self-edges vanish.
    """
    pairs = list(pairs)
    if not pairs:
        return g
    keep_of = {}
    used = set()
    for u, w in pairs:
        if u == w or u in used or w in used or w in keep_of.values():
            return None
        if g.nodes[u] != g.nodes[w]:
            return None
        used.update((u, w))
        keep_of[w] = u
    removed = set(keep_of)
    survivors = [i for i in range(g.n) if i not in removed]
    index = {old: new for new, old in enumerate(survivors)}
    rep = lambda i: index[keep_of.get(i, i)]  # noqa: E731
    edges = set()
    for i, j in g.edges:
        a, b = rep(i), rep(j)
        if a != b:
            edges.add((min(a, b), max(a, b)))
    try:
        return Graph(tuple(g.nodes[i] for i in survivors), frozenset(edges), g.schema)
    except GraphError:
        return None


def overlap_candidates(g: Graph, new_nodes: Sequence[int], old_nodes: Sequence[int]):
    """Pairs ``(old, new)`` with equal features that could be merged."""
    return [(u, w) for w in new_nodes for u in old_nodes if g.nodes[u] == g.nodes[w]]


def injective_subsets(pairs: Sequence[tuple[int, int]]):
    """Every subset of ``pairs`` using each endpoint at most once, ∅ first."""
    pairs = list(pairs)
    out = []

    def rec(k, chosen, used):
        if k == len(pairs):
            out.append(tuple(chosen))
            return
        rec(k + 1, chosen, used)
        u, w = pairs[k]
        if u not in used and w not in used:
            chosen.append(pairs[k])
            rec(k + 1, chosen, used | {u, w})
            chosen.pop()

    rec(0, [], frozenset())
    out.sort(key=len)
    return out


def feature_multiset(g: Graph) -> Counter:
    return Counter(g.nodes)


def disjoint_union(g: Graph, h: Graph) -> Graph:
    n = g.n
    edges = set(g.edges) | {(i + n, j + n) for i, j in h.edges}
    return Graph(g.nodes + h.nodes, frozenset(edges), g.schema)


