"""Recover a small graph with distinct node features from a single GAT gradient step.

Most seeds are recovered exactly; a few fail when the readout gradient is
rank-deficient. Run with ``python3 demos/reconstruct_gat.py``.
"""
from grain import AttackOptions, GeneratorSpec, ModelConfig, evaluate, generate, run_attack
from grain.gnn import simulate_client_step

spec = GeneratorSpec("unique_features", 7, seed=0, cardinalities=(8, 8, 6))
truth = generate(spec)
print(f"client graph: {truth.n} nodes, {len(truth.edges)} edges")

cfg = ModelConfig.for_schema(truth.schema, arch="gat", hidden_dim=64)
bundle = simulate_client_step(truth, cfg, label=1)

res = run_attack(bundle, options=AttackOptions(timeout=60))
print("candidate set sizes:", res.sizes)
print(f"gradient distance {res.delta:.3g}, exact={res.exact}")

scores = evaluate(truth, res.graph)
print(f"GSM-0/1/2: {scores['gsm0']:.1f} {scores['gsm1']:.1f} {scores['gsm2']:.1f}, full match: {scores['full']}")
