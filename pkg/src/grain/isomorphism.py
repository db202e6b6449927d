"""Feature-preserving isomorphism tests and canonical forms for small graphs."""
from __future__ import annotations

from collections import Counter

from .graph import Graph


def refine(g: Graph, colors: list[int]) -> list[int]:
    """Colour refinement to a stable partition.

    Colours are ranks of sorted signatures, so the result does not depend on
    node order.
    """
    n_classes = len(set(colors))
    while True:
        sigs = [(colors[i], tuple(sorted(colors[j] for j in g.adj[i]))) for i in range(g.n)]
        ranks = {s: r for r, s in enumerate(sorted(set(sigs)))}
        new = [ranks[s] for s in sigs]
        if len(ranks) == n_classes:
            return new
        colors, n_classes = new, len(ranks)


def initial_colors(g: Graph, root: int | None = None) -> list[int]:
    sigs = [(i == root, g.nodes[i]) for i in range(g.n)]
    ranks = {s: r for r, s in enumerate(sorted(set(sigs)))}
    return [ranks[s] for s in sigs]


def canonical_form(g: Graph, root: int | None = None) -> tuple:
    """Exact canonical certificate via individualisation-refinement.

    Two graphs get the same certificate iff they are feature-isomorphic
    (with roots mapped onto each other when ``root`` is given).
    """
    if g.n == 0:
        return ((), ())
    best = None

    def search(colors):
        nonlocal best
        colors = refine(g, colors)
        if len(set(colors)) == g.n:
            order = sorted(range(g.n), key=colors.__getitem__)
            pos = {v: k for k, v in enumerate(order)}
            cert = (tuple(g.nodes[v] for v in order),
                    tuple(sorted((min(pos[i], pos[j]), max(pos[i], pos[j])) for i, j in g.edges)))
            if best is None or cert < best:
                best = cert
            return
        counts = Counter(colors)
        target = min(c for c, k in counts.items() if k > 1)
        tried: list[int] = []
        for v in range(g.n):
            if colors[v] != target:
                continue
            # swapping twins is an automorphism, so their branches coincide
            nv = set(g.adj[v])
            if any(nv - {w} == set(g.adj[w]) - {v} for w in tried):
                continue
            tried.append(v)
            split = [2 * c + (1 if (c == target and u != v) else 0) for u, c in enumerate(colors)]
            search(split)

    search(initial_colors(g, root))
    return (root is not None,) + best


def wl_hash(g: Graph, rounds: int = 3) -> int:
    """Cheap isomorphism-invariant hash (not a certificate)."""
    colors = {i: hash(g.nodes[i]) for i in range(g.n)}
    for _ in range(rounds):
        colors = {i: hash((colors[i], tuple(sorted(colors[j] for j in g.adj[i]))))
                  for i in range(g.n)}
    return hash((g.n, len(g.edges), tuple(sorted(colors.values()))))


def feature_isomorphic(g1: Graph, g2: Graph) -> bool:
    """True iff some bijection maps edges onto edges and keeps node features.

    Backtracking over nodes of ``g1``; candidates are restricted to nodes of
    ``g2`` in the same refined colour class.
    """
    if g1.n != g2.n or len(g1.edges) != len(g2.edges):
        return False
    if Counter(g1.nodes) != Counter(g2.nodes):
        return False
    if g1.n == 0:
        return True
    # joint refinement keeps colours comparable across the two graphs
    joint = Graph(g1.nodes + g2.nodes,
                  frozenset(g1.edges | {(i + g1.n, j + g1.n) for i, j in g2.edges}),
                  g1.schema)
    colors = refine(joint, initial_colors(joint))
    c1, c2 = colors[:g1.n], colors[g1.n:]
    if Counter(c1) != Counter(c2):
        return False
    classes: dict[int, list[int]] = {}
    for j, c in enumerate(c2):
        classes.setdefault(c, []).append(j)

    # visit g1 nodes smallest-class first, then by adjacency to visited ones
    order, seen = [], set()
    by_size = sorted(range(g1.n), key=lambda i: (len(classes[c1[i]]), i))
    for start in by_size:
        if start in seen:
            continue
        stack = [start]
        while stack:
            u = stack.pop()
            if u in seen:
                continue
            seen.add(u)
            order.append(u)
            stack.extend(sorted((w for w in g1.adj[u] if w not in seen),
                                key=lambda i: -len(classes[c1[i]])))
    adj2 = [set(a) for a in g2.adj]
    mapping: dict[int, int] = {}
    used = set()

    def extend(k):
        if k == len(order):
            return True
        u = order[k]
        for cand in classes[c1[u]]:
            if cand in used:
                continue
            ok = True
            for w in g1.adj[u]:
                if w in mapping and mapping[w] not in adj2[cand]:
                    ok = False
                    break
            if not ok:
                continue
            # non-edges must also be preserved
            mapped_nb = sum(1 for w in g1.adj[u] if w in mapping)
            if sum(1 for x in adj2[cand] if x in used) != mapped_nb:
                continue
            mapping[u] = cand
            used.add(cand)
            if extend(k + 1):
                return True
            del mapping[u]
            used.discard(cand)
        return False

    return extend(0)
