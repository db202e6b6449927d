"""Command-line entry point: gen, simulate, attack, evaluate, batch."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .attack import AttackOptions, run_attack
from .datasets import KINDS, GeneratorSpec, generate, random_label
from .gnn import ARCHS, ModelConfig, simulate_client_step
from .graph import TASKS
from .metrics import evaluate

BOOTSTRAP_RESAMPLES = 10_000
SUMMARY_FIELDS = ("exact", "full", "gsm0", "gsm1", "gsm2", "delta")


class CliError(Exception):
    pass


def _emit(obj, out: str | None) -> None:
    text = io.dumps(obj)
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _ints(s: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None


def _model_flags(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--arch", choices=ARCHS, default=d("gcn"))
    p.add_argument("--layers", type=int, default=d(2))
    p.add_argument("--hidden", type=int, default=d(300))
    p.add_argument("--heads", type=int, default=d(2))
    p.add_argument("--activation", choices=("relu", "gelu"), default=d("relu"))
    p.add_argument("--seed", type=int, default=d(0))


def _attack_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, default=1e-3)
    p.add_argument("--timeout-sec", type=float, default=900.0)
    p.add_argument("--unique-heuristic", action="store_true")
    p.add_argument("--cap", type=int, default=200_000)
    p.add_argument("--max-nodes", type=int, default=None)
    p.add_argument("--gnn-only-distance", action="store_true")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in output")


def _attack_options(a) -> AttackOptions:
    return AttackOptions(tau=a.tau, timeout=a.timeout_sec, unique=a.unique_heuristic,
                         cap=a.cap, max_nodes=a.max_nodes, gnn_only=a.gnn_only_distance)


def _config(schema, a) -> ModelConfig:
    return ModelConfig.for_schema(schema, arch=a.arch, num_layers=a.layers, hidden_dim=a.hidden,
                                  heads=a.heads, activation=a.activation, seed=a.seed)


# -- commands ----------------------------------------------------------------------

def cmd_gen(a) -> int:
    specs = [GeneratorSpec(a.kind, a.n, seed=a.seed + k, edge_prob=a.edge_prob,
                           max_degree=a.max_degree, cardinalities=a.cardinalities,
                           num_classes=a.num_classes, task=a.task) for k in range(a.count)]
    if a.count == 1 and not a.out_dir:
        g = generate(specs[0])
        _emit(io.graph_to_dict(g), a.out)
        return 0
    out = Path(a.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for k, spec in enumerate(specs):
        g = generate(spec)
        name = f"graph_{k:04d}.json"
        io.save_graph(g, out / name)
        entries.append({"id": f"graph_{k:04d}", "path": name, "label": random_label(spec, g)})
    io.save_manifest(entries, out / "manifest.json")
    return 0


def cmd_simulate(a) -> int:
    g = io.load_graph(a.graph)
    cfg = _config(g.schema, a)
    label = json.loads(a.label) if a.label is not None else None
    _emit(io.bundle_to_dict(simulate_client_step(g, cfg, label)), a.out)
    return 0


def cmd_attack(a) -> int:
    bundle = io.load_bundle(a.bundle)
    schema = io.load_schema(a.schema) if a.schema else bundle.schema
    if schema is None:
        raise CliError("bundle carries no schema; pass --schema")
    cfg = bundle.config
    for flag, field in (("arch", "arch"), ("layers", "num_layers"), ("hidden", "hidden_dim"),
                        ("heads", "heads"), ("activation", "activation"), ("seed", "seed")):
        v = getattr(a, flag)
        if v is not None and v != getattr(cfg, field) and not (field == "heads" and cfg.arch == "gcn"):
            raise CliError(f"--{flag}={v} does not match the bundle ({field}={getattr(cfg, field)})")
    res = run_attack(bundle, schema, _attack_options(a))
    _emit(io.reconstruction_to_dict(res, a.timings), a.out)
    return 0


def cmd_evaluate(a) -> int:
    truth = io.load_graph(a.truth)
    rec, _ = io.load_reconstruction(a.reconstruction)
    _emit(evaluate(truth, rec), a.out)
    return 0


def _batch_one(job) -> dict:
    entry, a = job
    rec = {"id": entry["id"]}
    try:
        g = io.load_graph(entry["path"])
        cfg = _config(g.schema, a)
        bundle = simulate_client_step(g, cfg, entry.get("label"))
        res = run_attack(bundle, g.schema, _attack_options(a))
        ev = evaluate(g, res.graph)
        rec.update({"n": g.n, "delta": float(res.delta), "exact": bool(res.exact and ev["full"]),
                    "gsm0": ev["gsm0"], "gsm1": ev["gsm1"], "gsm2": ev["gsm2"],
                    "full": ev["full"], "sizes": dict(res.sizes)})
        if "aborted" in res.stats:
            rec["aborted"] = res.stats["aborted"]
        if res.stats.get("timed_out"):
            rec["timed_out"] = True
        if a.timings:
            rec["timings"] = dict(res.timings)
    except Exception as e:  # per-graph isolation
        rec["error"] = {"type": type(e).__name__, "message": str(e)}
    return rec


def bootstrap_ci(values, seed: int, resamples: int = BOOTSTRAP_RESAMPLES, level: float = 0.95):
    """Percentile bootstrap interval of the mean."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        return None, None
    rng = np.random.default_rng(seed)
    means = x[rng.integers(0, x.size, size=(resamples, x.size))].mean(axis=1)
    lo, hi = np.percentile(means, [50 * (1 - level), 50 * (1 + level)])
    return float(lo), float(hi)


def summarize(records: list[dict], seed: int = 0) -> dict:
    ok = [r for r in records if "error" not in r]
    out = {"graphs": len(records), "errors": len(records) - len(ok)}
    for k, name in enumerate(SUMMARY_FIELDS):
        vals = [float(r[name]) for r in ok if name in r and np.isfinite(float(r[name]))]
        lo, hi = bootstrap_ci(vals, seed + k)
        out[name] = {"mean": float(np.mean(vals)) if vals else None, "ci95": [lo, hi]}
    return out


def cmd_batch(a) -> int:
    entries = io.load_manifest(a.manifest)
    jobs = [(e, a) for e in entries]
    if a.workers > 1:
        with ProcessPoolExecutor(a.workers) as pool:
            records = list(pool.map(_batch_one, jobs))
    else:
        records = [_batch_one(j) for j in jobs]
    report = {"settings": {"arch": a.arch, "layers": a.layers, "hidden": a.hidden,
                           "heads": a.heads, "activation": a.activation, "seed": a.seed,
                           "tau": a.tau, "timeout_sec": a.timeout_sec,
                           "unique_heuristic": a.unique_heuristic,
                           "bootstrap_resamples": BOOTSTRAP_RESAMPLES},
              "records": records, "summary": summarize(records, a.bootstrap_seed)}
    _emit(report, a.out)
    return 0


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grain", description="Graph reconstruction from GNN gradients.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic graphs")
    g.add_argument("--kind", choices=KINDS, default="random_tree")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--edge-prob", type=float, default=0.3)
    g.add_argument("--max-degree", type=int, default=4)
    g.add_argument("--cardinalities", type=_ints, default=(6, 4))
    g.add_argument("--num-classes", type=int, default=2)
    g.add_argument("--task", choices=TASKS, default="graph_classification")
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out", help="graph file (single graph)")
    g.add_argument("--out-dir", help="directory for graphs and manifest.json")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("simulate", help="compute one client gradient step")
    s.add_argument("graph")
    _model_flags(s)
    s.add_argument("--label", help="JSON class id, or list of ids for node classification")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    at = sub.add_parser("attack", help="reconstruct a graph from a gradient bundle")
    at.add_argument("bundle")
    at.add_argument("--schema")
    _model_flags(at, defaults=False)
    _attack_flags(at)
    at.add_argument("--out")
    at.set_defaults(func=cmd_attack)

    ev = sub.add_parser("evaluate", help="score a reconstruction against the truth")
    ev.add_argument("truth")
    ev.add_argument("reconstruction")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("batch", help="simulate, attack and evaluate every graph of a manifest")
    b.add_argument("manifest")
    _model_flags(b)
    _attack_flags(b)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--bootstrap-seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_batch)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("GRAIN_LOG", "WARNING").upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        sys.stderr.write(json.dumps({"error": type(e).__name__, "message": str(e)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
