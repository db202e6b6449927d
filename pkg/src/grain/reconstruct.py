"""Depth-first assembly of filtered building blocks into a full graph.

The search starts from each block (best-scored first), repeatedly picks a
dangling node, glues a compatible block there and optionally merges the
new neighbours into existing nodes. Complete graphs are scored by how far
their gradients are from the observed ones.
"""
from __future__ import annotations

import logging
import sys
import time
from collections import Counter, OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gnn import (GRAPH_CLASSIFICATION, GradientBundle, _head, backprop, forward,
                  loss_grad_logits)
from .graph import BuildingBlock, Graph, disjoint_union, glue, injective_subsets, overlap
from .isomorphism import canonical_form
from .span import CandidateSet, build_span_basis, gluable_map

log = logging.getLogger(__name__)

EXACT_RTOL = 1e-9
DEFAULT_TIMEOUT = 900.0
MEMO_SIZE = 1_000_000
INF = float("inf")
EXHAUSTIVE_LABELINGS = 5000


# -- gradient distance ----------------------------------------------------------------

def _grad_names(bundle: GradientBundle, gnn_only: bool) -> list[str]:
    names = [k for k, _ in bundle.grads.named()]
    return [k for k in names if k.startswith("gnn.")] if gnn_only else names


def _flat(grads, names):
    return np.concatenate([grads[k].ravel() for k in names])


def _distinct_arrangements(labels: Sequence[int]):
    """Distinct orderings of a label multiset, lexicographic."""
    items = sorted(labels)
    n = len(items)
    out = [tuple(items)]
    a = list(items)
    while True:
        i = n - 2
        while i >= 0 and a[i] >= a[i + 1]:
            i -= 1
        if i < 0:
            return out
        j = n - 1
        while a[j] <= a[i]:
            j -= 1
        a[i], a[j] = a[j], a[i]
        a[i + 1:] = reversed(a[i + 1:])
        out.append(tuple(a))


def _n_arrangements(labels) -> int:
    from math import factorial
    out = factorial(len(labels))
    for c in Counter(labels).values():
        out //= factorial(c)
    return out


def _node_task_distance(g: Graph, bundle: GradientBundle, names, target):
    """Best label arrangement for node classification.

    Gradients are linear in the logit gradient, so each (node, class) pair
    contributes a fixed vector and the search runs over label arrangements.
    """
    cfg, w = bundle.config, bundle.weights
    tr = forward(g, w, cfg)
    n, C = g.n, cfg.num_classes
    o = tr.O - tr.O.max(axis=1, keepdims=True)
    p = np.exp(o)
    p /= p.sum(axis=1, keepdims=True)
    tr.probs = p
    base = _flat(backprop(tr, w, cfg, p / n).grads, names) - target
    cols = np.empty((n, C, base.size))
    for i in range(n):
        for c in range(C):
            d = np.zeros_like(p)
            d[i, c] = -1.0 / n
            cols[i, c] = _flat(backprop(tr, w, cfg, d).grads, names)
    known = [int(v) for v in bundle.labels] if bundle.labels is not None else []
    if len(known) != n:
        # free labels: coordinate descent from the per-node best choice
        lab = [int(np.argmin([np.linalg.norm(base + cols[i, c]) for c in range(C)])) for i in range(n)]
        return _polish(base, cols, lab, free=True)
    if _n_arrangements(known) <= EXHAUSTIVE_LABELINGS:
        arr = np.array(_distinct_arrangements(known))
        vec = base[None] + cols[np.arange(n)[None, :], arr].sum(axis=1)
        d = np.linalg.norm(vec, axis=1)
        k = int(np.argmin(d))
        return float(d[k]), [int(v) for v in arr[k]]
    return _polish(base, cols, sorted(known), free=False)


def _polish(base, cols, lab, free: bool):
    n, C = cols.shape[:2]
    cur = base + sum(cols[i, lab[i]] for i in range(n))
    best = np.linalg.norm(cur)
    improved = True
    while improved:
        improved = False
        moves = ([(i, c) for i in range(n) for c in range(C)] if free
                 else [(i, j) for i in range(n) for j in range(i + 1, n)])
        for a, b in moves:
            if free:
                if b == lab[a]:
                    continue
                cand = cur - cols[a, lab[a]] + cols[a, b]
            else:
                if lab[a] == lab[b]:
                    continue
                cand = cur - cols[a, lab[a]] - cols[b, lab[b]] + cols[a, lab[b]] + cols[b, lab[a]]
            d = np.linalg.norm(cand)
            if d < best - 1e-15:
                if free:
                    lab[a] = b
                else:
                    lab[a], lab[b] = lab[b], lab[a]
                cur, best, improved = cand, d, True
    return float(best), list(lab)


def gradient_distance_labeled(g: Graph, bundle: GradientBundle, gnn_only: bool = False):
    """``(delta, label)``: the smallest gradient distance over admissible labels.

    For graph classification ``label`` is the minimising class; for node
    classification it is the minimising per-node arrangement of the known
    label multiset.
    """
    cfg = bundle.config
    names = _grad_names(bundle, gnn_only)
    target = _flat(bundle.grads, names)
    if g.schema.width != cfg.input_dim:
        raise ValueError(f"schema width {g.schema.width} != model input dim {cfg.input_dim}")
    if cfg.task != GRAPH_CLASSIFICATION:
        return _node_task_distance(g, bundle, names, target)
    best, arg = INF, None
    tr = forward(g, bundle.weights, cfg)
    for c in range(cfg.num_classes):
        _head(tr, bundle.weights, cfg, c)
        grads = backprop(tr, bundle.weights, cfg, loss_grad_logits(tr, cfg)).grads
        d = float(np.linalg.norm(_flat(grads, names) - target))
        if d < best:
            best, arg = d, c
    return best, arg


def gradient_distance(g: Graph, bundle: GradientBundle, gnn_only: bool = False) -> float:
    return gradient_distance_labeled(g, bundle, gnn_only)[0]


def is_exact(delta: float, bundle: GradientBundle, rtol: float = EXACT_RTOL) -> bool:
    return delta <= rtol * float(np.linalg.norm(bundle.grads.flat()))


# -- ordering ---------------------------------------------------------------------

def order_by_vertex_scores(vertex_scores: Sequence[Sequence[float]], keys: Sequence) -> list[int]:
    """Indices sorted by summed per-vertex score, ties by key.

    Sums are rounded to 12 decimals so that float noise does not break ties.
    """
    totals = [round(float(sum(s)), 12) for s in vertex_scores]
    return sorted(range(len(totals)), key=lambda i: (totals[i], keys[i]))


def block_scores(tb: CandidateSet) -> list[list[float]]:
    """Per block, per vertex: the smallest span distance of a block gluable there."""
    glu = gluable_map(tb)
    out = []
    for i in range(len(tb)):
        out.append([min((tb.distances[j] for j in glu[i][v]), default=INF)
                    for v in sorted(glu[i])])
    return out


def order_blocks(tb: CandidateSet) -> CandidateSet:
    return tb.subset(order_by_vertex_scores(block_scores(tb), tb.keys))


# -- branching -------------------------------------------------------------------

def select_dangling(g: Graph) -> int:
    dang = g.dangling()
    if not dang:
        raise ValueError("graph has no dangling nodes")
    return max(dang, key=lambda i: (g.deficit(i), -i))


def _forced_pairs(h: Graph, old_n: int):
    by_feat: dict = {}
    for u in range(old_n):
        by_feat.setdefault(h.nodes[u], []).append(u)
    pairs = []
    for w in range(old_n, h.n):
        olds = by_feat.get(h.nodes[w], ())
        if len(olds) == 1:
            pairs.append((olds[0], w))
        elif len(olds) > 1:
            return None
    return pairs


def branch(ordered: Sequence[BuildingBlock], g: Graph, v: int, unique: bool = False) -> list[Graph]:
    """Children of ``g`` obtained by gluing each block at ``v`` then overlapping.

    Without ``unique`` every injective set of feature-equal (existing, new)
    pairs is tried, the empty set first. With ``unique`` every such pair is
    merged. Overlaps that would fuse two edges are dropped.
    """
    if v not in g.dangling():
        raise ValueError(f"node {v} is not dangling")
    out = []
    seen = set()
    for b in ordered:
        if b.center_features != g.nodes[v]:
            continue
        for h in glue(g, b, v):
            old_n = h.n if h is g else g.n
            if unique:
                pairs = _forced_pairs(h, old_n)
                subsets = [] if pairs is None else [tuple(pairs)]
            else:
                cand = [(u, w) for w in range(old_n, h.n) for u in range(old_n)
                        if h.nodes[u] == h.nodes[w]]
                subsets = injective_subsets(cand)
            for s in subsets:
                r = overlap(h, s)
                if r is None or len(r.edges) != len(h.edges):
                    continue
                k = (r.nodes, r.edges)
                if k in seen:
                    continue
                seen.add(k)
                out.append(r)
    return out


# -- search ---------------------------------------------------------------------

@dataclass
class SearchOptions:
    timeout: float = DEFAULT_TIMEOUT
    unique: bool = False
    max_nodes: int | None = None
    gnn_only: bool = False
    memo_size: int = MEMO_SIZE
    exact_rtol: float = EXACT_RTOL


@dataclass(eq=False)
class SearchState:
    current: Graph
    depth: int = 0
    elapsed: float = 0.0

    @property
    def dangling(self) -> tuple[int, ...]:
        return self.current.dangling()


@dataclass(eq=False)
class SearchResult:
    best_graph: Graph | None
    best_distance: float
    exact: bool
    complete: bool = True
    label_argmin: object = None
    stats: dict = field(default_factory=dict)


class _Found(Exception):
    pass


class _Timeout(Exception):
    pass


def default_max_nodes(bundle: GradientBundle) -> int:
    """Largest weight-gradient rank over the span-check layers."""
    L = bundle.config.num_layers
    return max(build_span_basis(bundle.gnn_grad(l)).rank for l in range(L + 1))


def root_graph(b: BuildingBlock) -> Graph:
    seed = Graph((b.center_features,), frozenset(), b.graph.schema)
    out = glue(seed, b, 0)
    return out[0] if out else seed


def do_dfs(tb: CandidateSet, bundle: GradientBundle, timeout: float | None = None,
           options: SearchOptions | None = None) -> SearchResult:
    """Search for a graph whose gradients match ``bundle``.

    Returns immediately on an exact match. On timeout the best complete
    graph so far is returned; if none was completed, the largest partial
    graph is returned with ``complete = False``.
    """
    opt = options or SearchOptions()
    if timeout is not None:
        opt = SearchOptions(**{**opt.__dict__, "timeout": timeout})
    t0 = time.monotonic()
    stats = {"nodes_expanded": 0, "branches_pruned": 0, "complete_graphs": 0,
             "timed_out": False, "wall_time": 0.0}
    if not len(tb):
        return SearchResult(None, INF, False, False, None, stats)
    ordered = order_blocks(tb)
    blocks = ordered.blocks
    max_nodes = opt.max_nodes or default_max_nodes(bundle)
    ref = float(np.linalg.norm(bundle.grads.flat()))
    memo: OrderedDict = OrderedDict()
    best = {"d": INF, "g": None, "label": None}
    partial = {"key": None, "g": None}

    def score(g):
        d, lab = gradient_distance_labeled(g, bundle, opt.gnn_only)
        stats["complete_graphs"] += 1
        if d < best["d"] or (d == best["d"] and canonical_form(g) < canonical_form(best["g"])):
            best.update(d=d, g=g, label=lab)
        return d

    roots = []
    for b in blocks:
        r = root_graph(b)
        if r.n <= max_nodes:
            roots.append(r)

    def visit(g: Graph, depth: int):
        if time.monotonic() - t0 > opt.timeout:
            raise _Timeout
        key = canonical_form(g)
        if key in memo:
            stats["branches_pruned"] += 1
            return
        memo[key] = None
        if len(memo) > opt.memo_size:
            memo.popitem(last=False)
        stats["nodes_expanded"] += 1
        dang = g.dangling()
        if not dang:
            d = score(g)
            if d <= opt.exact_rtol * ref:
                raise _Found
            if g.n < max_nodes:
                # the graph may have several components
                have = set(g.nodes)
                for r in roots:
                    if g.n + r.n > max_nodes or (opt.unique and have & set(r.nodes)):
                        continue
                    visit(disjoint_union(g, r), depth + 1)
            return
        pk = (-g.n, sum(g.deficit(i) for i in dang), key)
        if partial["key"] is None or pk < partial["key"]:
            partial.update(key=pk, g=g)
        v = select_dangling(g)
        for child in branch(blocks, g, v, opt.unique):
            if child.n > max_nodes:
                stats["branches_pruned"] += 1
                continue
            visit(child, depth + 1)

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 10_000))
    try:
        for r in roots:
            visit(r, 0)
    except _Found:
        pass
    except _Timeout:
        stats["timed_out"] = True
        log.warning("search timed out after %.1f s", opt.timeout)
    finally:
        sys.setrecursionlimit(limit)
    stats["wall_time"] = time.monotonic() - t0
    stats["max_nodes"] = max_nodes
    if best["g"] is not None:
        exact = best["d"] <= opt.exact_rtol * ref
        return SearchResult(best["g"], best["d"], exact, True, best["label"], stats)
    g = partial["g"] or (roots[0] if roots else None)
    if g is None:
        return SearchResult(None, INF, False, False, None, stats)
    d, lab = gradient_distance_labeled(g, bundle, opt.gnn_only)
    return SearchResult(g, d, False, False, lab, stats)
