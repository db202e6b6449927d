"""Span checks against weight gradients and building-block filtering.

A layer input row ``x`` can only belong to the client graph if it lies in
the column span of that layer's weight gradient. Distances here are
relative: ``||x - P x|| / ||x||``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from itertools import combinations, combinations_with_replacement
from math import comb
from typing import Sequence

import numpy as np

from .gnn import GradientBundle, ModelConfig, propagate_block, star_center_embeddings
from .graph import BuildingBlock, FeatureSchema, Graph, glue
from .isomorphism import canonical_form

log = logging.getLogger(__name__)

RANK_TOL = 1e-10
RECOVERABLE_TOL = 1e-8
DEFAULT_CAP = 200_000


class CandidateCapExceeded(RuntimeError):
    def __init__(self, level: int, count: int, cap: int):
        super().__init__(f"level {level}: {count} candidates exceed cap {cap}")
        self.level, self.count, self.cap = level, count, cap


@dataclass(frozen=True, eq=False)
class SpanBasis:
    basis: np.ndarray          # (dim, rank), orthonormal columns
    source_layer: int = -1
    truncation: int | None = None

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.basis.shape[0]


def build_span_basis(grad: np.ndarray, tol: float = RANK_TOL, truncation: int | None = None,
                     source_layer: int = -1) -> SpanBasis:
    """Orthonormal basis of the column span of ``grad`` (optionally its first
    ``truncation`` rows); singular values below ``tol * s_max`` are dropped."""
    m = np.asarray(grad, dtype=float)
    if truncation is not None:
        m = m[:truncation]
    if m.size == 0:
        return SpanBasis(np.zeros((m.shape[0], 0)), source_layer, truncation)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return SpanBasis(np.zeros((m.shape[0], 0)), source_layer, truncation)
    keep = s > tol * s[0]
    return SpanBasis(u[:, keep], source_layer, truncation)


def span_distances(z: np.ndarray, basis: SpanBasis, eps: float = 1e-30) -> np.ndarray:
    """Relative residuals for the rows of ``z`` (shape ``(k, dim)``)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != basis.dim:
        raise ValueError(f"vector length {z.shape[1]} != basis dimension {basis.dim}")
    b = basis.basis
    r = z - (z @ b) @ b.T
    return np.linalg.norm(r, axis=1) / np.maximum(np.linalg.norm(z, axis=1), eps)


def span_distance(z: np.ndarray, basis: SpanBasis, eps: float = 1e-30) -> float:
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("expected a vector")
    return float(span_distances(z[None], basis, eps)[0])


def recoverable_rows(grad_y: np.ndarray, tol: float = RECOVERABLE_TOL) -> set[int]:
    """Rows of ``grad_y`` that are not in the row span of the remaining rows.

    By the span-check theorem these are exactly the nodes whose layer inputs
    lie in the column span of the weight gradient.
    """
    gy = np.asarray(grad_y, dtype=float)
    out = set()
    for i in range(gy.shape[0]):
        row = gy[i]
        norm = np.linalg.norm(row)
        if norm == 0.0:
            continue
        rest = np.delete(gy, i, axis=0)
        basis = build_span_basis(rest.T) if rest.size else SpanBasis(np.zeros((gy.shape[1], 0)))
        res = row - basis.basis @ (basis.basis.T @ row)
        if np.linalg.norm(res) / norm > tol:
            out.add(i)
    return out


# -- candidate sets -----------------------------------------------------------------

def block_key(b: BuildingBlock) -> tuple:
    """Canonical key of a rooted block (exact up to feature isomorphism)."""
    return (b.hop, canonical_form(b.graph, b.center))


@dataclass(eq=False)
class CandidateSet:
    level: int
    blocks: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    keys: list = field(default_factory=list)

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    def add(self, block: BuildingBlock, distance: float = 0.0, key=None):
        self.blocks.append(block)
        self.distances.append(float(distance))
        self.keys.append(block_key(block) if key is None else key)

    def subset(self, idx: Sequence[int]) -> "CandidateSet":
        return CandidateSet(self.level, [self.blocks[i] for i in idx],
                            [self.distances[i] for i in idx], [self.keys[i] for i in idx])

    def sorted(self) -> "CandidateSet":
        return self.subset(sorted(range(len(self)), key=lambda i: self.keys[i]))

    def center_features(self) -> set:
        return {b.center_features for b in self.blocks}


def layer_basis(bundle: GradientBundle, layer: int, truncation: int | None = None) -> SpanBasis:
    return build_span_basis(bundle.gnn_grad(layer), truncation=truncation, source_layer=layer)


def filter(candidates: CandidateSet, bundle: GradientBundle, tau: float,
           layer: int | None = None, basis: SpanBasis | None = None) -> CandidateSet:
    """Keep blocks whose propagated center embedding passes the span check.

    ``layer`` defaults to the candidate level; ``layer == L`` checks against
    the first readout layer.
    """
    layer = candidates.level if layer is None else layer
    if not len(candidates):
        return CandidateSet(candidates.level)
    basis = layer_basis(bundle, layer) if basis is None else basis
    emb = np.stack([propagate_block(b, bundle.weights, bundle.config, layer)
                    for b in candidates.blocks])
    d = span_distances(emb, basis)
    keep = [i for i in range(len(candidates)) if d[i] < tau]
    out = candidates.subset(keep)
    out.distances = [float(d[i]) for i in keep]
    return out


def _single_node(schema: FeatureSchema, values, hop: int) -> BuildingBlock:
    return BuildingBlock(Graph((tuple(values),), frozenset(), schema), 0, hop)


def filter_nodes(schema: FeatureSchema, bundle: GradientBundle, tau: float,
                 cap: int = DEFAULT_CAP) -> CandidateSet:
    """Recover single-node feature vectors one feature at a time.

    Partial vectors are extended by the values of the next feature and the
    span check runs on the matching leading rows of the first-layer weight
    gradient, once the partial width exceeds the gradient rank.
    """
    grad = bundle.gnn_grad(0)
    full_rank = build_span_basis(grad).rank
    offsets, cards = schema.offsets, schema.cardinalities
    partial: list[tuple[int, ...]] = [()]
    dists = np.zeros(1)
    d_sum = 0
    for k, card in enumerate(cards):
        partial = [p + (v,) for p in partial for v in range(card)]
        if len(partial) > cap:
            raise CandidateCapExceeded(0, len(partial), cap)
        d_sum += card
        if d_sum > full_rank:
            basis = build_span_basis(grad, truncation=d_sum, source_layer=0)
            z = np.zeros((len(partial), d_sum))
            for r, p in enumerate(partial):
                z[r, [offsets[f] + v for f, v in enumerate(p)]] = 1.0
            dists = span_distances(z, basis)
            partial = [p for p, dd in zip(partial, dists) if dd < tau]
            dists = dists[dists < tau]
        else:
            dists = np.zeros(len(partial))
        log.debug("feature %d: %d partial vectors survive (d_sum=%d)", k, len(partial), d_sum)
    out = CandidateSet(0)
    for p, dd in zip(partial, dists):
        out.add(_single_node(schema, p, 0), dd)
    return out


def star_block(schema: FeatureSchema, center, leaves) -> BuildingBlock:
    nodes = (tuple(center),) + tuple(tuple(x) for x in leaves)
    edges = frozenset((0, j) for j in range(1, len(nodes)))
    return BuildingBlock(Graph(nodes, edges, schema), 0, 1)


def count_extensions(pool_size: int, degree: int, unique: bool = False) -> int:
    """Number of leaf multisets (or sets, under ``unique``) for one center."""
    if degree == 0:
        return 1
    if unique:
        return comb(pool_size, degree)
    return comb(pool_size + degree - 1, degree)


def extend_nodes(t0: CandidateSet, bundle: GradientBundle, tau: float, unique: bool = False,
                 cap: int = DEFAULT_CAP, batch: int = 20_000) -> CandidateSet:
    """Build every 1-hop star from the recovered nodes and span-check it at layer 1.

    A node of declared degree ``d`` receives every multiset of ``d`` pool
    nodes; pool nodes of declared degree 0 are never attached. With
    ``unique`` the leaves are distinct and differ from the center.
    """
    schema = bundle.schema
    cfg = bundle.config
    pool = [b.center_features for b in t0.blocks]
    pool_x = schema.one_hot(pool)
    pool_deg = np.array([schema.degree_of(p) for p in pool], dtype=float)
    attachable = [i for i, p in enumerate(pool) if schema.degree_of(p) > 0]
    layer = 1 if cfg.num_layers > 1 else cfg.num_layers
    basis = layer_basis(bundle, layer)
    total = 0
    for c, p in enumerate(pool):
        d = schema.degree_of(p)
        avail = [i for i in attachable if i != c] if unique else attachable
        total += count_extensions(len(avail), d, unique)
    if total > cap:
        raise CandidateCapExceeded(1, total, cap)
    out = CandidateSet(1)
    by_degree: dict[int, list] = {}
    for c, p in enumerate(pool):
        d = schema.degree_of(p)
        avail = [i for i in attachable if i != c] if unique else attachable
        gen = combinations(avail, d) if unique else combinations_with_replacement(avail, d)
        by_degree.setdefault(d, []).extend((c,) + leaves for leaves in gen)
    for d in sorted(by_degree):
        rows = np.array(by_degree[d], dtype=int).reshape(-1, d + 1)
        for start in range(0, len(rows), batch):
            chunk = rows[start:start + batch]
            emb = star_center_embeddings(bundle.weights, cfg, pool_x, pool_deg,
                                         chunk[:, 0], chunk[:, 1:])
            dist = span_distances(emb, basis)
            for r in np.flatnonzero(dist < tau):
                row = chunk[r]
                out.add(star_block(schema, pool[row[0]], [pool[i] for i in row[1:]]), dist[r])
    return _dedup(out)


def _dedup(cs: CandidateSet) -> CandidateSet:
    seen = {}
    for i, k in enumerate(cs.keys):
        seen.setdefault(k, i)
    return cs.subset(sorted(seen.values(), key=lambda i: cs.keys[i]))


def grow_level(tl: CandidateSet, t1: CandidateSet, cap: int = DEFAULT_CAP) -> CandidateSet:
    """Glue 1-hop blocks onto every dangling node of each level-``l`` block."""
    by_center: dict = {}
    for b in t1.blocks:
        by_center.setdefault(b.center_features, []).append(b)
    out = CandidateSet(tl.level + 1)
    seen = set()
    for blk in tl.blocks:
        states = [blk.graph]
        for v in sorted(blk.graph.dangling()):
            nxt = []
            for g in states:
                for b1 in by_center.get(g.nodes[v], ()):
                    nxt.extend(glue(g, b1, v, 1))
            states = nxt
            if not states:
                break
        for g in states:
            nb = BuildingBlock(g, blk.center, tl.level + 1)
            key = block_key(nb)
            if key in seen:
                continue
            seen.add(key)
            out.add(nb, 0.0, key)
            if len(out) > cap:
                raise CandidateCapExceeded(out.level, len(out), cap)
    return out


@dataclass(eq=False)
class GenerationStats:
    sizes: dict = field(default_factory=dict)      # "T0", "T0*", ... -> count
    seconds: dict = field(default_factory=dict)


def generate_bbs(t0: CandidateSet, bundle: GradientBundle, tau: float, unique: bool = False,
                 cap: int = DEFAULT_CAP, stats: GenerationStats | None = None) -> CandidateSet:
    """Grow the filtered node set into filtered ``L``-hop building blocks.

    Level ``L`` is checked against the first readout layer.
    """
    stats = GenerationStats() if stats is None else stats
    L = bundle.config.num_layers
    t = time.perf_counter()
    t1 = extend_nodes(t0, bundle, tau, unique=unique, cap=cap)
    stats.sizes["T1*"] = len(t1)
    stats.seconds["T1"] = time.perf_counter() - t
    log.info("level 1: |T1*| = %d", len(t1))
    if L == 1:
        return t1
    cur = t1
    for l in range(1, L):
        t = time.perf_counter()
        proposals = grow_level(cur, t1, cap=cap)
        stats.sizes[f"T{l + 1}"] = len(proposals)
        cur = filter(proposals, bundle, tau, layer=l + 1)
        stats.sizes[f"T{l + 1}*"] = len(cur)
        stats.seconds[f"T{l + 1}"] = time.perf_counter() - t
        log.info("level %d: |T| = %d, |T*| = %d", l + 1, len(proposals), len(cur))
    return cur


@dataclass(frozen=True, eq=False)
class EarlyExact:
    graph: Graph
    distance: float


def gluable_map(tl: CandidateSet, nodes_of=None) -> dict:
    """For each block index, per vertex: indices of blocks gluable there."""
    by_center: dict = {}
    for j, b in enumerate(tl.blocks):
        by_center.setdefault(b.center_features, []).append(j)
    out = {}
    for i, b in enumerate(tl.blocks):
        g = b.graph
        verts = range(g.n) if nodes_of is None else nodes_of(b)
        out[i] = {v: [j for j in by_center.get(g.nodes[v], ())
                      if glue(g, tl.blocks[j], v)] for v in verts}
    return out


def structure_filter(tl: CandidateSet, bundle: GradientBundle, distance_fn=None,
                     exact_rtol: float = 1e-9) -> CandidateSet | EarlyExact:
    """Drop blocks with a dangling node that no block in ``tl`` can extend.

    A block without dangling nodes whose gradients match the observation is
    returned immediately as the exact answer.
    """
    if distance_fn is None:
        from .reconstruct import gradient_distance as distance_fn
    ref = np.linalg.norm(bundle.grads.flat())
    for b in tl.blocks:
        if not b.graph.dangling():
            d = distance_fn(b.graph, bundle)
            if d <= exact_rtol * ref:
                return EarlyExact(b.graph, d)
    glu = gluable_map(tl, nodes_of=lambda b: sorted(b.graph.dangling()))
    keep = [i for i in range(len(tl)) if all(glu[i][v] for v in glu[i])]
    return tl.subset(keep)

