from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import auto_graph, bundle_for, make_schema, random_graph
from grain.gnn import simulate_client_step
from grain.graph import Graph, k_hop_neighborhood
from grain.isomorphism import feature_isomorphic
from grain.reconstruct import (INF, SearchOptions, branch, do_dfs, gradient_distance,
                               gradient_distance_labeled, is_exact, order_blocks,
                               order_by_vertex_scores, select_dangling)
from grain.span import CandidateSet

S = make_schema((4, 3), max_degree=3)


def true_blocks(g, l=2):
    tb = CandidateSet(l)
    for v in range(g.n):
        tb.add(k_hop_neighborhood(g, v, l), 0.0)
    return tb


def path(k):
    return auto_graph(S, [(i % 4, i % 3) for i in range(k)], [(i, i + 1) for i in range(k - 1)])


# -- gradient distance ---------------------------------------------------------------

@pytest.mark.parametrize("arch", ["gcn", "gat"])
def test_truth_has_zero_distance(arch):
    for seed in range(5):
        g = random_graph(seed, 6)
        b = bundle_for(g, arch=arch, seed=seed)
        d = gradient_distance(g, b)
        assert d <= 1e-10 * np.linalg.norm(b.grads.flat())
        assert is_exact(d, b)


def test_one_wrong_feature_is_positive():
    for seed in range(10):
        g = random_graph(seed, 5)
        b = bundle_for(g, seed=seed)
        nodes = list(g.nodes)
        v = nodes[0]
        nodes[0] = (v[0], (v[1] + 1) % 3, v[2])
        h = Graph(tuple(nodes), g.edges, g.schema)
        d = gradient_distance(h, b)
        assert d > 0 and not is_exact(d, b)


def test_label_minimisation_equals_brute_force():
    for seed in range(6):
        g = random_graph(seed, 5, num_classes=3)
        b = bundle_for(g, seed=seed, label=seed % 3)
        h = random_graph(seed + 100, 5, num_classes=3)
        per = [np.linalg.norm(simulate_client_step(h, b.config, c, b.weights).grads.flat()
                              - b.grads.flat()) for c in range(3)]
        d, lab = gradient_distance_labeled(h, b)
        assert d == pytest.approx(min(per), rel=1e-12)
        assert lab == int(np.argmin(per))
        assert gradient_distance_labeled(g, b)[1] == seed % 3


def test_gnn_only_distance_ignores_readout():
    g = random_graph(1, 5)
    b = bundle_for(g)
    h = random_graph(2, 5)
    assert gradient_distance(h, b, gnn_only=True) < gradient_distance(h, b)


def test_node_task_truth_is_exact():
    for seed in range(4):
        g = random_graph(seed, 5, task="node_classification", num_classes=3)
        labels = [int(x) for x in np.random.default_rng(seed).integers(0, 3, g.n)]
        b = bundle_for(g, seed=seed, label=labels)
        d, lab = gradient_distance_labeled(g, b)
        assert is_exact(d, b)
        # relabelled copy of the truth is still exact
        perm = list(np.random.default_rng(seed + 9).permutation(g.n))
        d2, _ = gradient_distance_labeled(g.permute(perm), b)
        assert is_exact(d2, b)


# -- ordering -----------------------------------------------------------------

def test_order_toy_example():
    scores = [[0.1, 0.2], [0.1], [0.3]]
    assert order_by_vertex_scores(scores, ["b", "c", "a"]) == [1, 2, 0]
    assert order_by_vertex_scores(scores, ["a", "c", "b"]) == [1, 0, 2]


def test_order_missing_partner_sorts_last():
    assert order_by_vertex_scores([[INF], [5.0, 5.0]], [0, 1]) == [1, 0]


def test_order_blocks_identical_are_adjacent():
    g = path(4)
    tb = CandidateSet(2)
    blocks = [k_hop_neighborhood(g, v, 2) for v in range(g.n)]
    for b, d in zip(blocks, (0.2, 0.1, 0.1, 0.3)):
        tb.add(b, d)
    tb.add(blocks[2], 0.1)
    ordered = order_blocks(tb)
    keys = ordered.keys
    first = keys.index(tb.keys[2])
    assert keys[first + 1] == tb.keys[2]


# -- branching ----------------------------------------------------------------

def test_select_dangling_examples():
    one = Graph(((2, 0, 0), (1, 1, 0)), frozenset({(0, 1)}), S)
    assert select_dangling(one) == 0
    two = Graph(((1, 0, 0), (3, 1, 0)), frozenset(), S)
    assert select_dangling(two) == 1
    tie = Graph(((1, 0, 0), (1, 1, 0)), frozenset(), S)
    assert select_dangling(tie) == 0
    with pytest.raises(ValueError):
        select_dangling(Graph(((0, 0, 0),), frozenset(), S))


def _cycle_case():
    s = make_schema((4, 3), max_degree=2)
    cyc = auto_graph(s, [(k, 0) for k in range(4)], [(0, 1), (1, 2), (2, 3), (0, 3)])
    # open chain D-A-B-C in which D and C still miss a neighbour
    chain = Graph((cyc.nodes[3], cyc.nodes[0], cyc.nodes[1], cyc.nodes[2]),
                  frozenset({(0, 1), (1, 2), (2, 3)}), s)
    return cyc, chain, k_hop_neighborhood(cyc, 2, 1)


def test_branch_emits_open_and_closed_cycle():
    cyc, chain, blk = _cycle_case()
    out = branch([blk], chain, 3)
    assert len(out) == 2
    assert any(feature_isomorphic(h, cyc) for h in out)
    assert any(h.n == 5 and len(h.edges) == 4 for h in out)


def test_branch_unique_keeps_only_closed_cycle():
    cyc, chain, blk = _cycle_case()
    out = branch([blk], chain, 3, unique=True)
    assert len(out) == 1 and feature_isomorphic(out[0], cyc)


def test_branch_no_gluable_block():
    cyc, chain, blk = _cycle_case()
    assert branch([k_hop_neighborhood(cyc, 0, 1)], chain, 3) == []
    with pytest.raises(ValueError):
        branch([blk], chain, 1)


# -- search -------------------------------------------------------------------

def test_single_block_exact_at_depth_zero():
    g = auto_graph(S, [(0, 0), (1, 1)], [(0, 1)])
    b = bundle_for(g)
    tb = CandidateSet(2)
    tb.add(k_hop_neighborhood(g, 0, 2))
    res = do_dfs(tb, b, 10)
    assert res.exact and res.complete and feature_isomorphic(res.best_graph, g)
    assert res.stats["nodes_expanded"] == 1


def test_path_reconstructed_from_true_blocks():
    g = path(3)
    for arch in ("gcn", "gat"):
        b = bundle_for(g, arch=arch, hidden=32)
        res = do_dfs(true_blocks(g), b, 30)
        assert res.exact and feature_isomorphic(res.best_graph, g)
        assert res.best_distance <= 1e-9 * np.linalg.norm(b.grads.flat())


def test_ablated_block_is_inexact():
    g = path(4)
    b = bundle_for(g, hidden=32)
    tb = true_blocks(g)
    # every complete assembly needs the block of interior node 1
    tb = tb.subset([i for i, blk in enumerate(tb.blocks) if blk.center_features != g.nodes[1]])
    res = do_dfs(tb, b, 30)
    assert not res.exact and res.best_distance > 0
    assert not res.stats["timed_out"]


def test_empty_block_set():
    g = path(3)
    res = do_dfs(CandidateSet(2), bundle_for(g), 5)
    assert res.best_graph is None and res.best_distance == INF and not res.exact


def test_search_is_deterministic():
    g = random_graph(4, 7, max_degree=3)
    b = bundle_for(g, hidden=32)
    r1 = do_dfs(true_blocks(g), b, 30)
    r2 = do_dfs(true_blocks(g), b, 30)
    assert r1.best_graph == r2.best_graph and r1.best_distance == r2.best_distance
    drop = lambda st: {k: v for k, v in st.items() if k != "wall_time"}
    assert drop(r1.stats) == drop(r2.stats)


def test_timeout_returns_flagged_result():
    g = random_graph(4, 7, max_degree=3)
    res = do_dfs(true_blocks(g), bundle_for(g, hidden=32), 0.0)
    assert res.stats["timed_out"]
    assert res.best_graph is not None and not res.exact


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8), arch=st.sampled_from(["gcn", "gat"]))
def test_true_blocks_give_exact_isomorphic_graph(seed, n, arch):
    g = random_graph(seed, n, cards=(4, 3), max_degree=3)
    b = bundle_for(g, arch=arch, hidden=32, seed=seed)
    res = do_dfs(true_blocks(g), b, 60, SearchOptions(max_nodes=max(n, 1)))
    assert res.exact
    assert not res.best_graph.dangling()
    h = res.best_graph
    if not feature_isomorphic(h, g):
        # mean pooling: k identical copies of a component give identical gradients
        assert Counter(g.nodes) == Counter({v: c * g.n // h.n for v, c in Counter(h.nodes).items()})
        c = bundle_for(h, arch=arch, hidden=32, seed=seed, label=res.label_argmin)
        for name, arr in b.grads.named():
            assert np.allclose(c.grads[name], arr, rtol=0, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 9))
def test_uniqueness_heuristic_keeps_truth_on_unique_features(seed, n):
    g = random_graph(seed, n, kind="unique_features", cards=(5, 4), max_degree=3)
    assert len(set(g.nodes)) == g.n
    b = bundle_for(g, hidden=32, seed=seed)
    res = do_dfs(true_blocks(g), b, 60, SearchOptions(unique=True, max_nodes=n))
    assert res.exact and feature_isomorphic(res.best_graph, g)
