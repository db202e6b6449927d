"""JSON file formats for schemas, graphs, gradient bundles, results and manifests.

Arrays travel as base64 of little-endian float64 bytes in C order, with
their shapes stored alongside. Output is UTF-8 with a fixed field order.
"""
from __future__ import annotations

import base64
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from .gnn import GradientBundle, ModelConfig, ModelWeights
from .graph import Feature, FeatureSchema, Graph, GraphError


class FormatError(ValueError):
    """Malformed input; the message names the offending location."""


def dumps(obj: Any) -> str:
    return json.dumps(_finite(obj), indent=2, ensure_ascii=False) + "\n"


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return _finite(float(obj))
    return obj


def _number(v, where: str) -> float:
    if v in ("inf", "-inf", "nan"):
        return float(v)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise FormatError(f"{where}: expected a number, got {v!r}")
    return float(v)


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> Any:
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from None


def _need(d, key, where, kind=None):
    if not isinstance(d, dict):
        raise FormatError(f"{where}: expected an object")
    if key not in d:
        raise FormatError(f"{where}: missing field {key!r}")
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise FormatError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}")
    return v


# -- schema --------------------------------------------------------------------------

def schema_to_dict(s: FeatureSchema) -> dict:
    return {"features": [{"name": f.name, "cardinality": f.cardinality} for f in s.features],
            "degree_feature_index": s.degree_feature_index,
            "num_classes": s.num_classes, "task": s.task}


def schema_from_dict(d, where: str = "schema") -> FeatureSchema:
    feats = _need(d, "features", where, list)
    out = []
    for k, f in enumerate(feats):
        name = _need(f, "name", f"{where}.features[{k}]", str)
        card = _need(f, "cardinality", f"{where}.features[{k}]", int)
        out.append(Feature(name, card))
    try:
        return FeatureSchema(tuple(out), int(d.get("degree_feature_index", 0)),
                             int(d.get("num_classes", 2)), d.get("task", "graph_classification"))
    except GraphError as e:
        raise FormatError(f"{where}: {e}") from None


def load_schema(path) -> FeatureSchema:
    return schema_from_dict(read_json(path), str(path))


def save_schema(s: FeatureSchema, path) -> None:
    write_json(path, schema_to_dict(s))


# -- graph ---------------------------------------------------------------------------

def graph_to_dict(g: Graph) -> dict:
    return {"schema": schema_to_dict(g.schema), "nodes": [list(v) for v in g.nodes],
            "edges": [list(e) for e in g.sorted_edges()]}


def graph_from_dict(d, where: str = "graph", schema: FeatureSchema | None = None) -> Graph:
    if schema is None:
        schema = schema_from_dict(_need(d, "schema", where), f"{where}.schema")
    nodes = _need(d, "nodes", where, list)
    edges = _need(d, "edges", where, list)
    for k, v in enumerate(nodes):
        if not isinstance(v, list) or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
            raise FormatError(f"{where}.nodes[{k}]: expected a list of integers")
    for k, e in enumerate(edges):
        if (not isinstance(e, list) or len(e) != 2
                or not all(isinstance(x, int) and not isinstance(x, bool) for x in e)):
            raise FormatError(f"{where}.edges[{k}]: expected [i, j]")
    try:
        return Graph(tuple(tuple(v) for v in nodes), frozenset(tuple(e) for e in edges), schema)
    except GraphError as e:
        raise FormatError(f"{where}: {e}") from None


def load_graph(path, schema: FeatureSchema | None = None) -> Graph:
    return graph_from_dict(read_json(path), str(path), schema)


def save_graph(g: Graph, path) -> None:
    write_json(path, graph_to_dict(g))


# -- bundle --------------------------------------------------------------------------

def encode_array(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")


def decode_array(s: str, shape, where: str) -> np.ndarray:
    try:
        raw = base64.b64decode(s.encode("ascii"), validate=True)
    except (ValueError, AttributeError):
        raise FormatError(f"{where}: invalid base64") from None
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != 8 * count:
        raise FormatError(f"{where}: {len(raw)} bytes do not match shape {list(shape)}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(float)


def bundle_to_dict(b: GradientBundle) -> dict:
    shapes = b.config.shapes()
    return {"config": b.config.to_dict(),
            "shapes": {k: list(v) for k, v in shapes.items()},
            "weights": {k: encode_array(b.weights[k]) for k in shapes},
            "grads": {k: encode_array(b.grads[k]) for k in shapes},
            "labels": None if b.labels is None else [int(v) for v in b.labels],
            "schema": None if b.schema is None else schema_to_dict(b.schema)}


def bundle_from_dict(d, where: str = "bundle") -> GradientBundle:
    try:
        cfg = ModelConfig.from_dict(_need(d, "config", where, dict))
    except (TypeError, ValueError) as e:
        raise FormatError(f"{where}.config: {e}") from None
    declared = _need(d, "shapes", where, dict)
    expected = cfg.shapes()
    if list(declared) != list(expected):
        raise FormatError(f"{where}.shapes: names {list(declared)} != expected {list(expected)}")
    for k, s in expected.items():
        if tuple(declared[k]) != s:
            raise FormatError(f"{where}.shapes.{k}: {declared[k]} != expected {list(s)}")
    arrays = {}
    for part in ("weights", "grads"):
        src = _need(d, part, where, dict)
        arr = {}
        for k, s in expected.items():
            arr[k] = decode_array(_need(src, k, f"{where}.{part}"), s, f"{where}.{part}.{k}")
        arrays[part] = ModelWeights(arr)
    labels = d.get("labels")
    schema = d.get("schema")
    try:
        return GradientBundle(cfg, arrays["weights"], arrays["grads"],
                              None if labels is None else np.asarray(labels, dtype=int),
                              None if schema is None else schema_from_dict(schema, f"{where}.schema"))
    except ValueError as e:
        raise FormatError(f"{where}: {e}") from None


def load_bundle(path) -> GradientBundle:
    return bundle_from_dict(read_json(path), str(path))


def save_bundle(b: GradientBundle, path) -> None:
    write_json(path, bundle_to_dict(b))


# -- reconstruction / evaluation / manifest -----------------------------------------------

def reconstruction_to_dict(result, include_timings: bool = False) -> dict:
    label = result.label_argmin
    if isinstance(label, (list, tuple, np.ndarray)):
        label = [int(v) for v in label]
    elif label is not None:
        label = int(label)
    stats = {"sizes": dict(result.sizes), **{k: v for k, v in result.stats.items()}}
    if include_timings:
        stats["timings"] = dict(result.timings)
    return {"graph": graph_to_dict(result.graph), "delta": float(result.delta),
            "exact": bool(result.exact), "label_argmin": label, "stats": stats}


def load_reconstruction(path) -> tuple[Graph, dict]:
    d = read_json(path)
    where = str(path)
    g = graph_from_dict(_need(d, "graph", where), f"{where}.graph")
    meta = {"delta": _number(_need(d, "delta", where), f"{where}.delta"),
            "exact": bool(_need(d, "exact", where)),
            "label_argmin": d.get("label_argmin"), "stats": d.get("stats", {})}
    return g, meta


def load_manifest(path) -> list[dict]:
    """Entries ``{"id", "path", "label"}``; relative paths resolve against the manifest."""
    d = read_json(path)
    where = str(path)
    base = Path(path).parent
    out = []
    for k, e in enumerate(_need(d, "graphs", where, list)):
        loc = f"{where}.graphs[{k}]"
        p = Path(_need(e, "path", loc, str))
        out.append({"id": str(e.get("id", p.stem)), "path": str(p if p.is_absolute() else base / p),
                    "label": e.get("label")})
    return out


def save_manifest(entries: list[dict], path) -> None:
    write_json(path, {"graphs": [{"id": e["id"], "path": e["path"], "label": e.get("label")}
                                 for e in entries]})
