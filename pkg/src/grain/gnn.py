"""Small GCN / GAT models in numpy with hand-written reverse mode.

Layer ``l`` computes ``X[l+1] = act(A[l] @ X[l] @ W[l])``. For GCN the
adjacency is the symmetric normalisation over closed neighbourhoods using
declared degrees (``deg + 1`` accounts for the self term). For GAT each head
runs a LeakyReLU(0.2) attention softmax over the closed neighbourhood and
head outputs are concatenated. A two-layer bias-free readout is applied per
node; graph classification mean-pools node logits before cross-entropy.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

from .graph import (GRAPH_CLASSIFICATION, NODE_CLASSIFICATION, BuildingBlock,
                    FeatureSchema, Graph)

LEAKY_SLOPE = 0.2
ARCHS = ("gcn", "gat")
ACTIVATIONS = ("relu", "gelu")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    arch: str = "gcn"
    num_layers: int = 2
    hidden_dim: int = 300
    heads: int = 2
    activation: str = "relu"
    task: str = GRAPH_CLASSIFICATION
    seed: int = 0
    readout_layers: int = field(default=2, init=False)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.num_layers < 1 or self.hidden_dim < 1 or self.input_dim < 1:
            raise ValueError("num_layers, hidden_dim and input_dim must be positive")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.arch == "gat" and (self.heads < 1 or self.hidden_dim % self.heads):
            raise ValueError(f"heads={self.heads} must divide hidden_dim={self.hidden_dim}")

    @classmethod
    def for_schema(cls, schema: FeatureSchema, **kw) -> "ModelConfig":
        return cls(input_dim=schema.width, num_classes=schema.num_classes,
                   task=schema.task, **kw)

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * self.num_layers
        return list(zip(dims[:-1], dims[1:]))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for l, (din, dout) in enumerate(self.layer_dims()):
            out[f"gnn.{l}.weight"] = (din, dout)
            if self.arch == "gat":
                out[f"gnn.{l}.attention"] = (self.heads, 2 * self.head_dim)
        out["readout.0.weight"] = (self.hidden_dim, self.hidden_dim)
        out["readout.1.weight"] = (self.hidden_dim, self.num_classes)
        return out

    def to_dict(self) -> dict:
        return {"arch": self.arch, "num_layers": self.num_layers, "hidden_dim": self.hidden_dim,
                "heads": self.heads, "activation": self.activation,
                "readout_layers": self.readout_layers, "input_dim": self.input_dim,
                "num_classes": self.num_classes, "task": self.task, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d.pop("readout_layers", None)
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Named parameter arrays in a fixed order (also used for gradients)."""

    arrays: dict

    def named(self) -> list[tuple[str, np.ndarray]]:
        return list(self.arrays.items())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def gnn(self, l: int) -> np.ndarray:
        return self.arrays[f"gnn.{l}.weight"]

    def attention(self, l: int) -> np.ndarray | None:
        return self.arrays.get(f"gnn.{l}.attention")

    @property
    def readout(self) -> tuple[np.ndarray, np.ndarray]:
        return self.arrays["readout.0.weight"], self.arrays["readout.1.weight"]

    def flat(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = list(self.arrays) if names is None else names
        return np.concatenate([self.arrays[k].ravel() for k in names])

    def replace(self, name: str, value: np.ndarray) -> "ModelWeights":
        arrays = dict(self.arrays)
        arrays[name] = value
        return ModelWeights(arrays)

    def check(self, cfg: ModelConfig) -> None:
        shapes = cfg.shapes()
        if list(shapes) != list(self.arrays):
            raise ValueError(f"parameter names {list(self.arrays)} != expected {list(shapes)}")
        for k, s in shapes.items():
            a = self.arrays[k]
            if a.shape != s:
                raise ValueError(f"{k}: shape {a.shape} != expected {s}")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{k}: non-finite entries")


def init_weights(cfg: ModelConfig) -> ModelWeights:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) from a PCG64 stream seeded by ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    arrays = {}
    for name, shape in cfg.shapes().items():
        fan_in = shape[1] if name.endswith("attention") else shape[0]
        bound = 1.0 / np.sqrt(fan_in)
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelWeights(arrays)


@dataclass(frozen=True, eq=False)
class GradientBundle:
    """Everything the server observes after one FedSGD client step."""

    config: ModelConfig
    weights: ModelWeights
    grads: ModelWeights
    labels: np.ndarray | None = None
    schema: FeatureSchema | None = None

    def __post_init__(self):
        self.weights.check(self.config)
        self.grads.check(self.config)
        if self.labels is not None and self.config.task != NODE_CLASSIFICATION:
            raise ValueError("labels are only carried in node-classification mode")

    def gnn_grad(self, l: int) -> np.ndarray:
        """Weight gradient used for the span check at layer ``l``; ``l = L`` is
        the first readout layer."""
        if l == self.config.num_layers:
            return self.grads["readout.0.weight"]
        return self.grads.gnn(l)


# -- activations ---------------------------------------------------------------

def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    return 0.5 * z * (1.0 + erf(z / np.sqrt(2.0)))


def activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(float)
    cdf = 0.5 * (1.0 + erf(z / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    return cdf + z * pdf


def _leaky(e):
    return np.where(e > 0, e, LEAKY_SLOPE * e)


def _softmax_masked(logits, mask):
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.where(mask, np.exp(z), 0.0)
    return ez / ez.sum(axis=-1, keepdims=True)


# -- graph to arrays -------------------------------------------------------------

def graph_arrays(g: Graph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-hot features, closed-neighbourhood mask and declared degrees."""
    n = g.n
    mask = np.eye(n, dtype=bool)
    for i, j in g.edges:
        mask[i, j] = mask[j, i] = True
    deg = np.array([g.declared_degree(i) for i in range(n)], dtype=float)
    return g.one_hot(), mask, deg


def gcn_adjacency(mask: np.ndarray, deg: np.ndarray) -> np.ndarray:
    d = deg + 1.0
    return np.where(mask, 1.0 / np.sqrt(np.outer(d, d)), 0.0)


def normalized_adjacency_gcn(g: Graph) -> np.ndarray:
    for i in range(g.n):
        if g.declared_degree(i) == 0 and g.degree(i) > 0:
            raise ValueError(f"node {i}: declared degree 0 but has neighbours")
    _, mask, deg = graph_arrays(g)
    return gcn_adjacency(mask, deg)


def _gat_attention(y, mask, att, heads):
    dh = y.shape[1] // heads
    e = np.empty((heads,) + mask.shape)
    for h in range(heads):
        yh = y[:, h * dh:(h + 1) * dh]
        s = yh @ att[h, :dh]
        t = yh @ att[h, dh:]
        e[h] = s[:, None] + t[None, :]
    return e, _softmax_masked(_leaky(e), mask[None])


def attention_adjacency_gat(g: Graph, x: np.ndarray, w: np.ndarray, att: np.ndarray) -> np.ndarray:
    """Per-head attention matrices, shape ``(heads, n, n)``; rows sum to one."""
    _, mask, _ = graph_arrays(g)
    return _gat_attention(x @ w, mask, att, att.shape[0])[1]


# -- forward -----------------------------------------------------------------------

@dataclass(eq=False)
class ForwardTrace:
    X: list            # layer inputs X[0..L]; X[L] feeds the readout
    Y: list            # X[l] @ W[l]
    A: list            # (n, n) for GCN, (heads, n, n) for GAT
    Z: list            # aggregated pre-activations
    E: list            # GAT raw attention logits (None for GCN)
    mask: np.ndarray
    U: np.ndarray | None = None      # X[L] @ R0
    H: np.ndarray | None = None      # act(U)
    O: np.ndarray | None = None      # per-node logits
    probs: np.ndarray | None = None
    labels: np.ndarray | None = None
    loss: float | None = None


def _propagate(x0, mask, deg, w: ModelWeights, cfg: ModelConfig, upto: int | None = None):
    upto = cfg.num_layers if upto is None else upto
    tr = ForwardTrace(X=[x0], Y=[], A=[], Z=[], E=[], mask=mask)
    x = x0
    a_gcn = gcn_adjacency(mask, deg) if cfg.arch == "gcn" else None
    for l in range(upto):
        y = x @ w.gnn(l)
        if cfg.arch == "gcn":
            a, e = a_gcn, None
            z = a @ y
        else:
            e, a = _gat_attention(y, mask, w.attention(l), cfg.heads)
            dh = cfg.head_dim
            z = np.concatenate([a[h] @ y[:, h * dh:(h + 1) * dh] for h in range(cfg.heads)], axis=1)
        x = activate(cfg.activation, z)
        tr.Y.append(y)
        tr.A.append(a)
        tr.Z.append(z)
        tr.E.append(e)
        tr.X.append(x)
    return tr


def _log_softmax(o):
    o = o - o.max(axis=-1, keepdims=True)
    return o - np.log(np.exp(o).sum(axis=-1, keepdims=True))


def _head(tr: ForwardTrace, w: ModelWeights, cfg: ModelConfig, label):
    r0, r1 = w.readout
    tr.U = tr.X[-1] @ r0
    tr.H = activate(cfg.activation, tr.U)
    tr.O = tr.H @ r1
    if label is None:
        return tr
    if cfg.task == GRAPH_CLASSIFICATION:
        lp = _log_softmax(tr.O.mean(axis=0))
        tr.labels = np.array([int(label)])
        tr.probs = np.exp(lp)
        tr.loss = float(-lp[int(label)])
    else:
        labels = np.asarray(label, dtype=int)
        if labels.shape != (tr.O.shape[0],):
            raise ValueError(f"need one label per node ({tr.O.shape[0]}), got shape {labels.shape}")
        lp = _log_softmax(tr.O)
        tr.labels = labels
        tr.probs = np.exp(lp)
        tr.loss = float(-lp[np.arange(len(labels)), labels].mean())
    return tr


def forward_arrays(x0, mask, deg, w: ModelWeights, cfg: ModelConfig, label=None) -> ForwardTrace:
    if x0.shape[1] != cfg.input_dim:
        raise ValueError(f"input width {x0.shape[1]} != config input_dim {cfg.input_dim}")
    return _head(_propagate(x0, mask, deg, w, cfg), w, cfg, label)


def forward(g: Graph, w: ModelWeights, cfg: ModelConfig, label=None) -> ForwardTrace:
    """Full forward pass; ``label`` is a class id (graph task) or one id per node."""
    if g.n < 1:
        raise ValueError("graph has no nodes")
    x0, mask, deg = graph_arrays(g)
    return forward_arrays(x0, mask, deg, w, cfg, label)


# -- backward ------------------------------------------------------------------------

def loss_grad_logits(tr: ForwardTrace, cfg: ModelConfig) -> np.ndarray:
    """dLoss/dO for the trace's labels."""
    n, c = tr.O.shape
    if cfg.task == GRAPH_CLASSIFICATION:
        g = tr.probs.copy()
        g[tr.labels[0]] -= 1.0
        return np.tile(g / n, (n, 1))
    g = tr.probs.copy()
    g[np.arange(n), tr.labels] -= 1.0
    return g / n


@dataclass(eq=False)
class Backprop:
    grads: ModelWeights
    dY: list
    dZ: list
    dX: list


def backprop(tr: ForwardTrace, w: ModelWeights, cfg: ModelConfig, d_logits: np.ndarray) -> Backprop:
    """Reverse pass from an arbitrary upstream gradient on the per-node logits."""
    r0, r1 = w.readout
    out = {}
    out["readout.1.weight"] = tr.H.T @ d_logits
    du = (d_logits @ r1.T) * activate_grad(cfg.activation, tr.U)
    out["readout.0.weight"] = tr.X[-1].T @ du
    dx = du @ r0.T
    L = len(tr.Y)
    dYs, dZs, dXs = [None] * L, [None] * L, [None] * (L + 1)
    dXs[L] = dx
    for l in reversed(range(L)):
        dz = dx * activate_grad(cfg.activation, tr.Z[l])
        y = tr.Y[l]
        if cfg.arch == "gcn":
            dy = tr.A[l].T @ dz
        else:
            att = w.attention(l)
            dh = cfg.head_dim
            dy = np.zeros_like(y)
            datt = np.zeros_like(att)
            for h in range(cfg.heads):
                cols = slice(h * dh, (h + 1) * dh)
                p, e, yh, dzh = tr.A[l][h], tr.E[l][h], y[:, cols], dz[:, cols]
                dp = dzh @ yh.T
                dy[:, cols] += p.T @ dzh
                dlk = p * (dp - (p * dp).sum(axis=1, keepdims=True))
                de = dlk * np.where(e > 0, 1.0, LEAKY_SLOPE)
                ds, dt = de.sum(axis=1), de.sum(axis=0)
                dy[:, cols] += np.outer(ds, att[h, :dh]) + np.outer(dt, att[h, dh:])
                datt[h, :dh] = yh.T @ ds
                datt[h, dh:] = yh.T @ dt
            out[f"gnn.{l}.attention"] = datt
        out[f"gnn.{l}.weight"] = tr.X[l].T @ dy
        dx = dy @ w.gnn(l).T
        dYs[l], dZs[l], dXs[l] = dy, dz, dx
    ordered = {k: out[k] for k in cfg.shapes()}
    return Backprop(ModelWeights(ordered), dYs, dZs, dXs)


def backward(tr: ForwardTrace, w: ModelWeights, cfg: ModelConfig,
             schema: FeatureSchema | None = None) -> GradientBundle:
    """Exact weight gradients of the trace's loss."""
    if tr.loss is None:
        raise ValueError("trace has no loss; run forward with a label")
    bp = backprop(tr, w, cfg, loss_grad_logits(tr, cfg))
    labels = tr.labels.copy() if cfg.task == NODE_CLASSIFICATION else None
    return GradientBundle(cfg, w, bp.grads, labels, schema)


def loss_value(g: Graph, w: ModelWeights, cfg: ModelConfig, label) -> float:
    return forward(g, w, cfg, label).loss


def default_label(g: Graph, cfg: ModelConfig):
    """Deterministic pseudo-random label(s) derived from the config seed."""
    rng = np.random.default_rng([cfg.seed, 1])
    if cfg.task == GRAPH_CLASSIFICATION:
        return int(rng.integers(cfg.num_classes))
    return rng.integers(cfg.num_classes, size=g.n)


def simulate_client_step(g: Graph, cfg: ModelConfig, label=None,
                         weights: ModelWeights | None = None) -> GradientBundle:
    """One FedSGD step on ``g``: seeded weights, forward, backward."""
    w = init_weights(cfg) if weights is None else weights
    label = default_label(g, cfg) if label is None else label
    return backward(forward(g, w, cfg, label), w, cfg, g.schema)


# -- building-block propagation -----------------------------------------------------

def propagate_block(b: BuildingBlock, w: ModelWeights, cfg: ModelConfig, l: int) -> np.ndarray:
    """Layer-``l`` input embedding of the block center (``l = 0`` gives its one-hot)."""
    if b.hop < l:
        raise ValueError(f"block hop {b.hop} too small for layer {l}")
    if not 0 <= l <= cfg.num_layers:
        raise ValueError(f"layer {l} outside [0, {cfg.num_layers}]")
    x0, mask, deg = graph_arrays(b.graph)
    return _propagate(x0, mask, deg, w, cfg, upto=l).X[l][b.center]


def star_center_embeddings(w: ModelWeights, cfg: ModelConfig, pool_x: np.ndarray,
                           pool_deg: np.ndarray, centers: np.ndarray,
                           leaves: np.ndarray) -> np.ndarray:
    """Layer-1 embeddings of many star-shaped 1-hop blocks at once.

    ``centers`` has shape ``(B,)`` and ``leaves`` shape ``(B, d)``; both index
    rows of the node pool. All stars share the same leaf count ``d``.
    """
    y_pool = pool_x @ w.gnn(0)
    yc = y_pool[centers]
    dc = pool_deg[centers] + 1.0
    if cfg.arch == "gcn":
        z = yc / dc[:, None]
        if leaves.shape[1]:
            coef = 1.0 / np.sqrt(dc[:, None] * (pool_deg[leaves] + 1.0))
            z = z + np.einsum("bj,bjk->bk", coef, y_pool[leaves])
        return activate(cfg.activation, z)
    att = w.attention(0)
    dh = cfg.head_dim
    parts = []
    for h in range(cfg.heads):
        cols = slice(h * dh, (h + 1) * dh)
        src = y_pool[:, cols] @ att[h, :dh]
        dst = y_pool[:, cols] @ att[h, dh:]
        logits = np.concatenate([(src[centers] + dst[centers])[:, None],
                                 src[centers][:, None] + dst[leaves]], axis=1)
        lk = _leaky(logits)
        lk = lk - lk.max(axis=1, keepdims=True)
        p = np.exp(lk)
        p /= p.sum(axis=1, keepdims=True)
        idx = np.concatenate([centers[:, None], leaves], axis=1)
        parts.append(np.einsum("bj,bjk->bk", p, y_pool[idx][:, :, cols]))
    return activate(cfg.activation, np.concatenate(parts, axis=1))
