"""How the graph similarity scores react to common reconstruction errors."""
from grain import GeneratorSpec, evaluate, generate
from grain.graph import Graph, disjoint_union

g = generate(GeneratorSpec("molecule_like", 8, seed=2, cardinalities=(6, 4)))


def show(name, h):
    r = evaluate(g, h)
    print(f"{name:<22} gsm0={r['gsm0']:6.1f} gsm1={r['gsm1']:6.1f} gsm2={r['gsm2']:6.1f} full={r['full']}")


show("relabelled copy", g.permute(list(reversed(range(g.n)))))

nodes = list(g.nodes)
nodes[0] = (nodes[0][0], (nodes[0][1] + 1) % 6, nodes[0][2])
show("one wrong feature", Graph(tuple(nodes), g.edges, g.schema))

show("one edge removed", Graph(g.nodes, frozenset(sorted(g.edges)[1:]), g.schema))

show("two extra nodes", disjoint_union(g, Graph(g.nodes[:2], frozenset(), g.schema)))
