"""Seeded synthetic graph generators.

All randomness comes from ``numpy.random.default_rng(seed)`` (PCG64). The
degree feature sits at index 0 with cardinality ``max_degree + 1`` and is
filled in from the generated structure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

from .graph import GRAPH_CLASSIFICATION, Feature, FeatureSchema, Graph

KINDS = ("random_tree", "erdos_renyi", "molecule_like", "unique_features")
MOLECULE_MAX_DEGREE = 4


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int
    seed: int = 0
    edge_prob: float = 0.3
    max_degree: int = 4
    cardinalities: tuple[int, ...] = (6, 4)
    num_classes: int = 2
    task: str = GRAPH_CLASSIFICATION
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "cardinalities", tuple(int(c) for c in self.cardinalities))
        if self.kind not in KINDS:
            raise GeneratorError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.n < 1:
            raise GeneratorError("n must be >= 1")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise GeneratorError("edge_prob must lie in [0, 1]")
        if self.max_degree < 0:
            raise GeneratorError("max_degree must be >= 0")
        if any(c < 1 for c in self.cardinalities):
            raise GeneratorError("cardinalities must be positive")

    @property
    def effective_max_degree(self) -> int:
        if self.kind == "molecule_like":
            return min(self.max_degree, MOLECULE_MAX_DEGREE)
        return self.max_degree

    def schema(self) -> FeatureSchema:
        names = self.feature_names or tuple(f"f{k}" for k in range(1, len(self.cardinalities) + 1))
        feats = [Feature("degree", self.effective_max_degree + 1)]
        feats += [Feature(nm, c) for nm, c in zip(names, self.cardinalities)]
        return FeatureSchema(tuple(feats), 0, self.num_classes, self.task)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n": self.n, "seed": self.seed, "edge_prob": self.edge_prob,
                "max_degree": self.max_degree, "cardinalities": list(self.cardinalities),
                "num_classes": self.num_classes, "task": self.task}


def _tree_edges(rng, n: int, cap: int, weight=None) -> set:
    """Random recursive tree respecting a degree cap; node order is shuffled after."""
    if n > 1 and cap < 1:
        raise GeneratorError(f"cannot connect {n} nodes with max_degree 0")
    if n > 2 and cap < 2:
        raise GeneratorError(f"cannot connect {n} nodes with max_degree 1")
    deg = np.zeros(n, dtype=int)
    edges = set()
    for i in range(1, n):
        open_ = np.flatnonzero(deg[:i] < cap)
        p = np.ones(len(open_)) if weight is None else weight(deg[open_])
        j = int(rng.choice(open_, p=p / p.sum()))
        edges.add((j, i))
        deg[i] += 1
        deg[j] += 1
    return edges


def _add_random_edges(rng, n: int, edges: set, cap: int, prob: float) -> set:
    deg = np.zeros(n, dtype=int)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) in edges:
                continue
            if rng.random() < prob and deg[i] < cap and deg[j] < cap:
                edges.add((i, j))
                deg[i] += 1
                deg[j] += 1
    return edges


def _shuffle(rng, n: int, edges: set) -> set:
    perm = rng.permutation(n)
    return {(min(perm[i], perm[j]), max(perm[i], perm[j])) for i, j in edges}


def _degrees(n: int, edges: set) -> list[int]:
    deg = [0] * n
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    return deg


def _random_features(rng, n, cards):
    return [tuple(int(rng.integers(c)) for c in cards) for _ in range(n)]


def _unique_features(rng, degrees, cards):
    space = prod(cards)
    need: dict[int, int] = {}
    for d in degrees:
        need[d] = need.get(d, 0) + 1
    worst = max(need.values())
    if worst > space:
        raise GeneratorError(
            f"unique_features infeasible: {worst} nodes share a degree but only "
            f"{space} non-degree feature combinations exist")
    used: dict[int, set] = {}
    out = []
    for d in degrees:
        taken = used.setdefault(d, set())
        # rejection sampling, then exhaustive fallback once the space is crowded
        for _ in range(64):
            cand = tuple(int(rng.integers(c)) for c in cards)
            if cand not in taken:
                break
        else:
            free = [i for i in range(space) if _unravel(i, cards) not in taken]
            cand = _unravel(int(free[rng.integers(len(free))]), cards)
        taken.add(cand)
        out.append(cand)
    return out


def _unravel(i, cards):
    return tuple(int(v) for v in np.unravel_index(i, cards))


def generate(spec: GeneratorSpec) -> Graph:
    """Deterministic graph for ``spec``; satisfies every Graph invariant."""
    rng = np.random.default_rng(spec.seed)
    n, cap = spec.n, spec.effective_max_degree
    if spec.kind == "random_tree":
        edges = _tree_edges(rng, n, cap)
    elif spec.kind == "erdos_renyi":
        edges = _add_random_edges(rng, n, set(), cap, spec.edge_prob)
    elif spec.kind == "molecule_like":
        # favour attaching to low-degree atoms; a few ring closures
        edges = _tree_edges(rng, n, cap, weight=lambda d: np.where(d < 2, 3.0, np.where(d < 3, 1.0, 0.15)))
        edges = _add_random_edges(rng, n, edges, min(cap, 3), min(spec.edge_prob, 0.5) / max(n, 1))
    else:
        edges = _tree_edges(rng, n, cap)
        edges = _add_random_edges(rng, n, edges, cap, spec.edge_prob / max(n - 1, 1) * 2)
    edges = _shuffle(rng, n, edges)
    degrees = _degrees(n, edges)
    if spec.kind == "unique_features":
        rest = _unique_features(rng, degrees, spec.cardinalities)
    else:
        rest = _random_features(rng, n, spec.cardinalities)
    nodes = tuple((min(d, cap),) + r for d, r in zip(degrees, rest))
    return Graph(nodes, frozenset(edges), spec.schema())


def random_label(spec: GeneratorSpec, g: Graph):
    rng = np.random.default_rng([spec.seed, 7])
    if spec.task == GRAPH_CLASSIFICATION:
        return int(rng.integers(spec.num_classes))
    return [int(v) for v in rng.integers(spec.num_classes, size=g.n)]


def random_graph_like(g: Graph, seed: int) -> Graph:
    """Same node count and schema; features and edges drawn uniformly."""
    rng = np.random.default_rng(seed)
    s = g.schema
    cap = s.max_degree
    edges = set()
    n = g.n
    p = 2 * len(g.edges) / max(n * (n - 1), 1)
    edges = _add_random_edges(rng, n, edges, cap, p)
    deg = _degrees(n, edges)
    nodes = []
    for i in range(n):
        vals = [int(rng.integers(c)) for c in s.cardinalities]
        vals[s.degree_feature_index] = min(deg[i], cap)
        nodes.append(tuple(vals))
    return Graph(tuple(nodes), frozenset(edges), s)
