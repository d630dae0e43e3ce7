"""Relational GNN missingness scorer, trained from scratch with numpy.

Forward pass for one subgraph view (nodes in canonical sorted order)::

    H0 = X @ W_x + node_emb[type]
    H(l+1) = relu( sum_t A_t @ H(l) @ W_rel[l, t] )       l = 0, 1
    g = [mean(H2); max(H2)]
    a = relu(g @ W_hidden + b_hidden) @ W_out + b_out
    m = sigmoid(a)

``A_t`` counts the edges of type ``t`` between two nodes (undirected); the
``SelfLoop`` type is the identity. Gradients are derived by hand in
:func:`backward` and checked against finite differences in the tests.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CheckpointError, TrainingError
from .graph import ENTITY, FACT, SYNONYM
from .sampler import SubgraphView

SELF_LOOP = "SelfLoop"
FORMAT_VERSION = "graphmend-checkpoint/1"
BCE_EPS = 1e-7
N_LAYERS = 2


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 64
    hidden_dim: int = 256
    classifier_dim: int = 64
    edge_types: tuple[str, ...] = (FACT, SYNONYM, SELF_LOOP)
    node_types: tuple[str, ...] = (ENTITY,)
    seed: int = 0

    def __post_init__(self):
        if self.input_dim <= 0 or self.hidden_dim <= 0 or self.classifier_dim <= 0:
            raise ValueError("model dimensions must be positive")
        object.__setattr__(self, "edge_types", tuple(self.edge_types))
        object.__setattr__(self, "node_types", tuple(self.node_types))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h, c = self.input_dim, self.hidden_dim, self.classifier_dim
        return {
            "W_x": (d, h),
            "node_emb": (len(self.node_types), h),
            "W_rel": (N_LAYERS, len(self.edge_types), h, h),
            "W_hidden": (2 * h, c),
            "b_hidden": (c,),
            "W_out": (c,),
            "b_out": (1,),
        }

    def fan_in(self, name: str) -> int:
        return {
            "W_x": self.input_dim,
            "node_emb": 1,
            "W_rel": self.hidden_dim,
            "W_hidden": 2 * self.hidden_dim,
            "b_hidden": 2 * self.hidden_dim,
            "W_out": self.classifier_dim,
            "b_out": self.classifier_dim,
        }[name]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class MissingnessModel:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "MissingnessModel":
        return MissingnessModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(cfg: ModelConfig, rng: np.random.Generator | None = None) -> MissingnessModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    params = {}
    for name, shape in cfg.shapes().items():
        bound = 1.0 / math.sqrt(cfg.fan_in(name))
        params[name] = rng.uniform(-bound, bound, size=shape)
    return MissingnessModel(cfg, params)


# ----------------------------------------------------------------------
# forward


@dataclass
class ViewTensors:
    node_ids: list[str]
    x: np.ndarray
    node_type: np.ndarray
    adj: list[np.ndarray | None]  # None marks the identity (self loop)


def view_tensors(view: SubgraphView, cfg: ModelConfig) -> ViewTensors:
    g = view.graph
    node_ids = sorted(set(view.nodes))
    if not node_ids:
        raise ValueError("view has no nodes")
    pos = {n: i for i, n in enumerate(node_ids)}
    x = g.feature_matrix(node_ids)
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"feature dim {x.shape[1]} != model input dim {cfg.input_dim}")
    try:
        node_type = np.array([cfg.node_types.index(g.nodes[n].type) for n in node_ids])
    except ValueError:
        raise ValueError("view contains a node type the model has no embedding for") from None
    n = len(node_ids)
    adj: list[np.ndarray | None] = []
    for t in cfg.edge_types:
        if t == SELF_LOOP:
            adj.append(None)
            continue
        a = np.zeros((n, n))
        for eid in set(view.edges):
            e = g.edges[eid]
            if e.type != t:
                continue
            i, j = pos[e.u], pos[e.v]
            a[i, j] += 1.0
            if i != j:
                a[j, i] += 1.0
        adj.append(a)
    return ViewTensors(node_ids, x, node_type, adj)


def _propagate(adj, h):
    return np.concatenate([h if a is None else a @ h for a in adj], axis=1)


def _forward(model: MissingnessModel, vt: ViewTensors):
    p = model.params
    R, hdim = len(vt.adj), model.config.hidden_dim
    h = vt.x @ p["W_x"] + p["node_emb"][vt.node_type]
    cache = {"h0": h}
    for layer in range(N_LAYERS):
        agg = _propagate(vt.adj, h)
        z = agg @ p["W_rel"][layer].reshape(R * hdim, hdim)
        h = np.maximum(z, 0.0)
        cache[f"agg{layer}"] = agg
        cache[f"z{layer}"] = z
    cache["h2"] = h
    pooled = np.concatenate([h.mean(axis=0), h.max(axis=0)])
    zc = pooled @ p["W_hidden"] + p["b_hidden"]
    hc = np.maximum(zc, 0.0)
    logit = float(hc @ p["W_out"] + p["b_out"][0])
    cache.update(pooled=pooled, zc=zc, hc=hc)
    return logit, cache


def encode(model: MissingnessModel, view: SubgraphView) -> dict[str, np.ndarray]:
    """Final-layer node embeddings keyed by node id."""
    vt = view_tensors(view, model.config)
    _, cache = _forward(model, vt)
    return {n: cache["h2"][i] for i, n in enumerate(vt.node_ids)}


def pool(embeddings) -> np.ndarray:
    """Concatenated coordinatewise mean and max over node embeddings."""
    if isinstance(embeddings, dict):
        embeddings = [embeddings[k] for k in sorted(embeddings)]
    h = np.asarray(embeddings, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("pooling needs at least one node embedding")
    return np.concatenate([h.mean(axis=0), h.max(axis=0)])


def sigmoid(a: float) -> float:
    if a >= 0:
        return 1.0 / (1.0 + math.exp(-a))
    ea = math.exp(a)
    return ea / (1.0 + ea)


def score(model: MissingnessModel, view: SubgraphView) -> tuple[float, float]:
    """(logit, missingness score) for one view."""
    logit, _ = _forward(model, view_tensors(view, model.config))
    return logit, sigmoid(logit)


def score_views(model: MissingnessModel, views: Iterable[SubgraphView]) -> np.ndarray:
    return np.array([score(model, v)[1] for v in views])


def bce_loss(m: float, y: int, eps: float = BCE_EPS) -> float:
    c = min(max(m, eps), 1.0 - eps)
    return -y * math.log(c) - (1 - y) * math.log(1.0 - c)


# ----------------------------------------------------------------------
# backward


def backward(model: MissingnessModel, view: SubgraphView, y: int):
    """Exact gradient of ``bce_loss(score(view), y)``.

    Returns ``(grads, loss, m)`` where ``grads`` mirrors ``model.params``.
    """
    return _backward(model, view_tensors(view, model.config), y)


def _backward(model: MissingnessModel, vt: ViewTensors, y: int):
    p = model.params
    cfg = model.config
    R, hdim = len(vt.adj), cfg.hidden_dim
    logit, cache = _forward(model, vt)
    m = sigmoid(logit)
    loss = bce_loss(m, y)
    grads = {k: np.zeros_like(v) for k, v in p.items()}

    # clamping makes the loss flat outside [eps, 1 - eps]
    dlogit = (m - y) if BCE_EPS < m < 1.0 - BCE_EPS else 0.0

    hc, zc, pooled = cache["hc"], cache["zc"], cache["pooled"]
    grads["W_out"] = hc * dlogit
    grads["b_out"] = np.array([dlogit])
    dzc = p["W_out"] * dlogit * (zc > 0)
    grads["W_hidden"] = np.outer(pooled, dzc)
    grads["b_hidden"] = dzc
    dpooled = p["W_hidden"] @ dzc

    h2 = cache["h2"]
    n = h2.shape[0]
    dh = np.broadcast_to(dpooled[:hdim] / n, h2.shape).copy()
    arg = h2.argmax(axis=0)
    dh[arg, np.arange(hdim)] += dpooled[hdim:]

    for layer in reversed(range(N_LAYERS)):
        dz = dh * (cache[f"z{layer}"] > 0)
        w = p["W_rel"][layer].reshape(R * hdim, hdim)
        grads["W_rel"][layer] = (cache[f"agg{layer}"].T @ dz).reshape(R, hdim, hdim)
        dagg = dz @ w.T
        dh = np.zeros((n, hdim))
        for t, a in enumerate(vt.adj):
            block = dagg[:, t * hdim:(t + 1) * hdim]
            dh += block if a is None else a.T @ block

    grads["W_x"] = vt.x.T @ dh
    np.add.at(grads["node_emb"], vt.node_type, dh)
    return grads, loss, m


# ----------------------------------------------------------------------
# training


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= c.learning_rate * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


@dataclass
class TrainResult:
    model: MissingnessModel
    losses: list[float] = field(default_factory=list)


def train(
    model: MissingnessModel,
    epochs: Iterable[Sequence[SubgraphView]],
    cfg: TrainConfig,
    on_epoch=None,
) -> TrainResult:
    """Adam on batch-mean BCE. ``epochs`` yields labeled views, one list per epoch.

    The model is updated in place and also returned. ``losses[i]`` is the
    mean per-view BCE seen during epoch ``i``.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, cfg)
    result = TrainResult(model)
    for epoch, views in enumerate(epochs):
        views = list(views)
        if not views:
            raise TrainingError(f"epoch {epoch} is empty")
        order = rng.permutation(len(views))
        total = 0.0
        for start in range(0, len(views), cfg.batch_size):
            batch = [views[int(i)] for i in order[start:start + cfg.batch_size]]
            acc = {k: np.zeros_like(v) for k, v in model.params.items()}
            for view in batch:
                grads, loss, _ = backward(model, view, view.label)
                if not math.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, root {view.root!r}, label {view.label}"
                    )
                total += loss
                for k, g in grads.items():
                    acc[k] += g
            for k in acc:
                acc[k] /= len(batch)
            opt.step(model.params, acc)
        for k, v in model.params.items():
            if not np.all(np.isfinite(v)):
                raise TrainingError(f"parameter {k} became non-finite at epoch {epoch}")
        result.losses.append(total / len(views))
        if on_epoch is not None:
            on_epoch(epoch, result.losses[-1])
    return result


# ----------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: MissingnessModel, path) -> None:
    cfg = asdict(model.config)
    with open(path, "wb") as fh:
        np.savez(
            fh,
            __format__=np.array(FORMAT_VERSION),
            __config__=np.array(json.dumps(cfg, sort_keys=True)),
            **{k: np.ascontiguousarray(v, dtype="<f8") for k, v in model.params.items()},
        )


def load_checkpoint(path, expected_input_dim: int | None = None) -> MissingnessModel:
    try:
        data = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "__format__" not in data or str(data["__format__"]) != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint format")
        try:
            cfg = ModelConfig(**json.loads(str(data["__config__"])))
        except (TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: bad config header: {exc}") from exc
        if expected_input_dim is not None and cfg.input_dim != expected_input_dim:
            raise CheckpointError(
                f"config mismatch: checkpoint input_dim {cfg.input_dim}, expected {expected_input_dim}"
            )
        params = {}
        for name, shape in cfg.shapes().items():
            if name not in data or data[name].shape != shape:
                raise CheckpointError(f"{path}: tensor {name} missing or shaped wrong")
            params[name] = np.array(data[name], dtype=np.float64)
    return MissingnessModel(cfg, params)
