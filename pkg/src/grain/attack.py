"""End-to-end reconstruction from one observed gradient bundle."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

from .gnn import GradientBundle
from .graph import FeatureSchema, Graph
from .reconstruct import (DEFAULT_TIMEOUT, SearchOptions, SearchResult, default_max_nodes,
                          do_dfs, gradient_distance_labeled, is_exact)
from .span import (DEFAULT_CAP, CandidateCapExceeded, EarlyExact, GenerationStats,
                   filter_nodes, generate_bbs, structure_filter)

log = logging.getLogger(__name__)


@dataclass
class AttackOptions:
    tau: float = 1e-3
    timeout: float = DEFAULT_TIMEOUT
    unique: bool = False
    cap: int = DEFAULT_CAP
    max_nodes: int | None = None
    gnn_only: bool = False


@dataclass(eq=False)
class AttackResult:
    graph: Graph
    delta: float
    exact: bool
    label_argmin: object
    sizes: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    stats: dict = field(default_factory=dict)


def _fallback(schema: FeatureSchema, t0, limit: int) -> Graph:
    nodes = tuple(b.center_features for b in t0.blocks[:max(limit, 1)])
    if not nodes:
        nodes = (tuple(0 for _ in schema.features),)
    return Graph(nodes, frozenset(), schema)


def run_attack(bundle: GradientBundle, schema: FeatureSchema | None = None,
               options: AttackOptions | None = None) -> AttackResult:
    """Filter nodes, grow and filter blocks, then search for the graph."""
    opt = options or AttackOptions()
    schema = schema or bundle.schema
    if schema is None:
        raise ValueError("a feature schema is required")
    if bundle.schema is None:
        bundle = GradientBundle(bundle.config, bundle.weights, bundle.grads, bundle.labels, schema)
    start = time.perf_counter()
    timings, sizes, stats = {}, {}, {}
    max_nodes = opt.max_nodes or default_max_nodes(bundle)

    t = time.perf_counter()
    t0 = filter_nodes(schema, bundle, opt.tau, cap=opt.cap)
    timings["filter_nodes"] = time.perf_counter() - t
    sizes["T0*"] = len(t0)
    log.info("recovered %d candidate node feature vectors", len(t0))

    def finish(g: Graph, label=None, delta=None) -> AttackResult:
        if delta is None:
            delta, label = gradient_distance_labeled(g, bundle, opt.gnn_only)
        timings["total"] = time.perf_counter() - start
        return AttackResult(g, delta, is_exact(delta, bundle), label, sizes, timings, stats)

    gen = GenerationStats()
    try:
        tl = generate_bbs(t0, bundle, opt.tau, unique=opt.unique, cap=opt.cap, stats=gen)
    except CandidateCapExceeded as e:
        log.warning("candidate cap hit: %s", e)
        sizes.update(gen.sizes)
        stats["aborted"] = str(e)
        return finish(_fallback(schema, t0, max_nodes))
    sizes.update(gen.sizes)
    timings.update({f"blocks_{k}": v for k, v in gen.seconds.items()})

    t = time.perf_counter()
    sf = structure_filter(tl, bundle, lambda g, b: gradient_distance_labeled(g, b, opt.gnn_only)[0])
    timings["structure_filter"] = time.perf_counter() - t
    if isinstance(sf, EarlyExact):
        stats["early_exit"] = True
        return finish(sf.graph)
    sizes["TB"] = len(sf)

    t = time.perf_counter()
    res: SearchResult = do_dfs(sf, bundle, opt.timeout, SearchOptions(
        unique=opt.unique, max_nodes=max_nodes, gnn_only=opt.gnn_only))
    timings["search"] = time.perf_counter() - t
    stats.update({k: v for k, v in res.stats.items() if k != "wall_time"})
    stats["complete"] = res.complete
    if res.best_graph is None:
        return finish(_fallback(schema, t0, max_nodes))
    return finish(res.best_graph, res.label_argmin, res.best_distance)
