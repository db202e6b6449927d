"""Reconstruct client graphs from the gradients of small GCN/GAT models."""
from .attack import AttackOptions, AttackResult, run_attack
from .datasets import GeneratorSpec, generate
from .gnn import GradientBundle, ModelConfig, ModelWeights, init_weights, simulate_client_step
from .graph import BuildingBlock, Feature, FeatureSchema, Graph, make_graph
from .isomorphism import canonical_form, feature_isomorphic
from .metrics import Aggregator, evaluate, full_match, gsm, match_nodes

__all__ = ["AttackOptions", "AttackResult", "run_attack", "GeneratorSpec", "generate",
           "GradientBundle", "ModelConfig", "ModelWeights", "init_weights", "simulate_client_step",
           "BuildingBlock", "Feature", "FeatureSchema", "Graph", "make_graph", "canonical_form",
           "feature_isomorphic", "Aggregator", "evaluate", "full_match", "gsm", "match_nodes"]
