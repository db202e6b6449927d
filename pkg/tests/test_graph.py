from itertools import permutations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import auto_graph, make_schema, random_graph
from grain.graph import (BuildingBlock, Graph, GraphError, dangling_nodes, glue,
                         injective_subsets, k_hop_neighborhood, overlap)
from grain.isomorphism import canonical_form, feature_isomorphic

S = make_schema()


def path3():
    return auto_graph(S, [(0, 0), (1, 0), (2, 0)], [(0, 1), (1, 2)])


# -- construction ------------------------------------------------------------------

def test_graph_rejects_self_edge_and_out_of_range():
    with pytest.raises(GraphError, match="self-edge"):
        Graph(((1, 0, 0),), frozenset({(0, 0)}), S)
    with pytest.raises(GraphError, match="out of range"):
        Graph(((1, 0, 0), (1, 0, 0)), frozenset({(0, 2)}), S)


def test_graph_rejects_degree_above_declared():
    with pytest.raises(GraphError, match="node 0"):
        Graph(((0, 0, 0), (1, 0, 0)), frozenset({(0, 1)}), S)


def test_edges_are_normalised():
    g = Graph(((1, 0, 0), (1, 1, 0)), frozenset({(1, 0)}), S)
    assert g.edges == frozenset({(0, 1)})


# -- k-hop neighbourhoods ----------------------------------------------------------------

def test_k_hop_on_path():
    g = path3()
    b0 = k_hop_neighborhood(g, 0, 0)
    assert b0.graph.n == 1 and not b0.graph.edges
    b1 = k_hop_neighborhood(g, 0, 1)
    assert b1.graph.n == 2 and len(b1.graph.edges) == 1 and b1.hop == 1
    b2 = k_hop_neighborhood(g, 0, 2)
    assert feature_isomorphic(b2.graph, g)


def test_k_hop_out_of_range():
    with pytest.raises(IndexError):
        k_hop_neighborhood(path3(), 3, 1)


def test_k_hop_drops_edges_between_outermost_nodes():
    # an edge is kept only if one endpoint lies within distance k - 1
    tri = auto_graph(S, [(0, 0), (1, 0), (2, 0)], [(0, 1), (1, 2), (0, 2)])
    assert len(k_hop_neighborhood(tri, 0, 1).graph.edges) == 2
    sq = auto_graph(S, [(0, 0)] * 4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    b = k_hop_neighborhood(sq, 0, 2)
    assert b.graph.n == 4 and len(b.graph.edges) == 4


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 9), k=st.integers(0, 3))
def test_k_hop_is_idempotent(seed, n, k):
    g = random_graph(seed, n)
    for v in range(g.n):
        b = k_hop_neighborhood(g, v, k)
        again = k_hop_neighborhood(b.graph, b.center, k)
        assert again.graph.nodes == b.graph.nodes and again.graph.edges == b.graph.edges


# -- dangling ----------------------------------------------------------------------

def test_dangling_examples():
    assert dangling_nodes(Graph(((0, 0, 0),), frozenset(), S)) == set()
    assert dangling_nodes(Graph(((2, 0, 0),), frozenset(), S)) == {0}
    star = Graph(((3, 0, 0), (1, 1, 0), (2, 1, 1), (3, 2, 2)),
                 frozenset({(0, 1), (0, 2), (0, 3)}), S)
    assert dangling_nodes(star) == {2, 3}
    assert dangling_nodes(BuildingBlock(star, 0, 1)) == {2, 3}


# -- glue -------------------------------------------------------------------------

def test_glue_single_node_onto_edge_block():
    a = Graph(((1, 0, 0),), frozenset(), S)
    blk = BuildingBlock(Graph(((1, 0, 0), (1, 1, 0)), frozenset({(0, 1)}), S), 0, 1)
    out = glue(a, blk, 0)
    assert len(out) == 1 and feature_isomorphic(out[0], blk.graph)


def test_glue_center_mismatch_is_empty():
    a = Graph(((1, 2, 0),), frozenset(), S)
    blk = BuildingBlock(Graph(((1, 0, 0), (1, 1, 0)), frozenset({(0, 1)}), S), 0, 1)
    assert glue(a, blk, 0) == []


def test_glue_matches_existing_neighbour_and_attaches_the_rest():
    # host A-B glued at B with block B'{A', C}
    host = Graph(((1, 0, 0), (2, 1, 0)), frozenset({(0, 1)}), S)
    blk = BuildingBlock(Graph(((2, 1, 0), (1, 0, 0), (1, 2, 2)), frozenset({(0, 1), (0, 2)}), S), 0, 1)
    out = glue(host, blk, 1)
    assert len(out) == 1
    want = Graph(((1, 0, 0), (2, 1, 0), (1, 2, 2)), frozenset({(0, 1), (1, 2)}), S)
    assert feature_isomorphic(out[0], want)


def _brute_glue_1hop(g, b, c):
    """Every feature-consistent way to complete c's neighbourhood from a 1-hop block."""
    if g.nodes[c] != b.center_features:
        return set()
    gn = list(g.adj[c])
    bn = list(b.graph.adj[b.center])
    out = set()
    for img in permutations(range(len(bn)), len(gn)):
        if any(g.nodes[u] != b.graph.nodes[bn[k]] for u, k in zip(gn, img)):
            continue
        extra = sorted(b.graph.nodes[bn[k]] for k in range(len(bn)) if k not in img)
        nodes = g.nodes + tuple(extra)
        edges = set(g.edges) | {(c, g.n + k) for k in range(len(extra))}
        try:
            out.add(canonical_form(Graph(nodes, frozenset(edges), g.schema)))
        except GraphError:
            pass
    return out


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 5), m=st.integers(1, 5))
def test_glue_matches_brute_force_on_small_instances(seed, n, m):
    small = make_schema((2, 2), max_degree=4)
    host = random_graph(seed, n, cards=(2, 2), max_degree=4, edge_prob=0.5)
    src = random_graph(seed + 1, m, cards=(2, 2), max_degree=4, edge_prob=0.6)
    assert host.schema == small
    for v in range(src.n):
        blk = k_hop_neighborhood(src, v, 1)
        for c in range(host.n):
            got = {canonical_form(h) for h in glue(host, blk, c)}
            assert got == _brute_glue_1hop(host, blk, c)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 9), k=st.integers(1, 3))
def test_true_block_glues_onto_its_own_graph_without_change(seed, n, k):
    g = random_graph(seed, n)
    for v in range(g.n):
        out = glue(g, k_hop_neighborhood(g, v, k), v)
        assert len(out) == 1 and out[0] == g


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 9))
def test_glue_never_exceeds_declared_degree(seed, n):
    g = random_graph(seed, n)
    for v in range(g.n):
        seed_graph = Graph((g.nodes[v],), frozenset(), g.schema)
        for h in glue(seed_graph, k_hop_neighborhood(g, v, 1), 0):
            assert all(h.degree(i) <= h.declared_degree(i) for i in range(h.n))
            assert h.deficit(0) == 0


# -- overlap ----------------------------------------------------------------------

def test_overlap_examples():
    g = path3()
    assert overlap(g, []) is g
    assert overlap(g, [(0, 2)]) is None


def test_overlap_closes_cycle():
    # path 0-1-2-3 whose endpoints share features and declare degree 2
    g = Graph(((2, 0, 0), (2, 1, 0), (2, 2, 0), (2, 0, 0)),
              frozenset({(0, 1), (1, 2), (2, 3)}), S)
    r = overlap(g, [(0, 3)])
    assert r.n == 3 and len(r.edges) == 3
    assert all(r.degree(i) == 2 for i in range(3))


def test_overlap_rejects_reuse_and_degree_violation():
    g = Graph(((1, 0, 0), (1, 0, 0), (1, 0, 0), (1, 1, 0)),
              frozenset({(0, 3), (1, 2)}), S)
    assert overlap(g, [(0, 1), (0, 2)]) is None
    # merging 1 into 0 gives node 0 two neighbours but it declares one
    assert overlap(g, [(0, 1)]) is None


def test_injective_subsets_include_empty_first():
    subs = injective_subsets([(0, 3), (1, 3), (0, 4)])
    assert subs[0] == ()
    assert set(subs) == {(), ((0, 3),), ((1, 3),), ((0, 4),), ((1, 3), (0, 4))}
