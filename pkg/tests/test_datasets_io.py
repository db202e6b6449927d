import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bundle_for, random_graph
from grain import io
from grain.datasets import KINDS, GeneratorError, GeneratorSpec, generate, random_label
from grain.graph import Graph


def connected(g):
    seen, stack = {0}, [0]
    while stack:
        for w in g.adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == g.n


# -- generators ----------------------------------------------------------------------

def test_tree_example():
    g = generate(GeneratorSpec("random_tree", 5, seed=3))
    assert len(g.edges) == 4 and connected(g)


def test_same_seed_same_graph():
    for kind in KINDS:
        spec = GeneratorSpec(kind, 9, seed=11)
        assert generate(spec) == generate(spec)


def test_zero_edge_probability_gives_isolated_nodes():
    g = generate(GeneratorSpec("erdos_renyi", 6, seed=1, edge_prob=0.0))
    assert not g.edges and all(v[0] == 0 for v in g.nodes)


def test_infeasible_unique_features():
    with pytest.raises(GeneratorError):
        generate(GeneratorSpec("unique_features", 10, cardinalities=(1, 1), max_degree=2))
    with pytest.raises(GeneratorError):
        GeneratorSpec("lattice", 3)


@pytest.mark.parametrize("kind", KINDS)
def test_generator_invariants_over_many_draws(kind):
    degrees = Counter()
    for seed in range(10_000):
        n = 1 + seed % 16
        spec = GeneratorSpec(kind, n, seed=seed, cardinalities=(8, 8, 6))
        g = generate(spec)
        assert g.n == n
        cap = spec.effective_max_degree
        for i in range(n):
            assert g.declared_degree(i) == g.degree(i) <= cap
        if kind == "random_tree":
            assert len(g.edges) == n - 1 and connected(g)
        elif kind == "molecule_like":
            assert cap == 4 and connected(g)
            degrees.update(g.degree(i) for i in range(n))
        elif kind == "unique_features":
            assert len(set(g.nodes)) == n
    if kind == "molecule_like":
        low = sum(degrees[d] for d in (1, 2, 3))
        assert low > 0.8 * sum(degrees.values())


def test_random_label_is_deterministic_and_in_range():
    spec = GeneratorSpec("random_tree", 6, seed=2, num_classes=3)
    g = generate(spec)
    assert random_label(spec, g) == random_label(spec, g) in range(3)
    node = GeneratorSpec("random_tree", 6, seed=2, num_classes=3, task="node_classification")
    lab = random_label(node, generate(node))
    assert len(lab) == 6 and all(0 <= x < 3 for x in lab)


# -- round trips ----------------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12), kind=st.sampled_from(KINDS))
def test_graph_round_trip(seed, n, kind):
    g = generate(GeneratorSpec(kind, n, seed=seed, cardinalities=(8, 8, 6)))
    text = io.dumps(io.graph_to_dict(g))
    back = io.graph_from_dict(json.loads(text))
    assert back == g
    assert io.dumps(io.graph_to_dict(back)) == text


def test_file_round_trips(tmp_path):
    g = random_graph(3, 6)
    io.save_graph(g, tmp_path / "g.json")
    assert io.load_graph(tmp_path / "g.json") == g
    io.save_schema(g.schema, tmp_path / "s.json")
    assert io.load_schema(tmp_path / "s.json") == g.schema
    for arch in ("gcn", "gat"):
        b = bundle_for(g, arch=arch)
        io.save_bundle(b, tmp_path / "b.json")
        c = io.load_bundle(tmp_path / "b.json")
        assert c.config == b.config and c.schema == b.schema
        for name, arr in b.grads.named():
            assert np.array_equal(c.grads[name], arr)
            assert np.array_equal(c.weights[name], b.weights[name])
        assert (tmp_path / "b.json").read_text() == io.dumps(io.bundle_to_dict(c))


def test_non_finite_numbers_serialise():
    text = io.dumps({"delta": float("inf"), "x": [float("nan"), 1.0]})
    assert json.loads(text) == {"delta": "inf", "x": ["nan", 1.0]}


# -- malformed input --------------------------------------------------------------------

def test_edge_out_of_range_rejected():
    g = random_graph(1, 3)
    d = io.graph_to_dict(g)
    d["edges"].append([0, 3])
    with pytest.raises(io.FormatError, match="out of range"):
        io.graph_from_dict(d)


def test_degree_violation_reports_node():
    g = random_graph(1, 3, edge_prob=0.0)
    d = io.graph_to_dict(g)
    d["edges"] = [[0, 1]]
    with pytest.raises(io.FormatError, match="node 0"):
        io.graph_from_dict(d)


def test_bad_node_entry_reports_position():
    d = io.graph_to_dict(random_graph(1, 3))
    d["nodes"][2] = "x"
    with pytest.raises(io.FormatError, match=r"nodes\[2\]"):
        io.graph_from_dict(d)


def test_json_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "nodes": [1,\n}')
    with pytest.raises(io.FormatError, match="line 3"):
        io.read_json(p)


def test_bundle_shape_mismatch_rejected():
    b = bundle_for(random_graph(2, 4))
    d = io.bundle_to_dict(b)
    name = next(iter(d["shapes"]))
    d["shapes"][name] = [d["shapes"][name][0] + 1, d["shapes"][name][1]]
    with pytest.raises(io.FormatError, match="shapes"):
        io.bundle_from_dict(d)
    d = io.bundle_to_dict(b)
    d["grads"][name] = io.encode_array(np.zeros(3))
    with pytest.raises(io.FormatError, match="bytes"):
        io.bundle_from_dict(d)


def test_manifest_paths_resolve_against_manifest(tmp_path):
    io.save_manifest([{"id": "a", "path": "g.json", "label": 1}], tmp_path / "m.json")
    [entry] = io.load_manifest(tmp_path / "m.json")
    assert entry == {"id": "a", "path": str(tmp_path / "g.json"), "label": 1}


def test_schema_mismatch_between_nodes_and_schema():
    g = random_graph(0, 2)
    d = io.graph_to_dict(g)
    d["nodes"][0] = d["nodes"][0] + [0]
    with pytest.raises(io.FormatError, match="node 0"):
        io.graph_from_dict(d)
    assert isinstance(io.graph_from_dict(io.graph_to_dict(g)), Graph)
