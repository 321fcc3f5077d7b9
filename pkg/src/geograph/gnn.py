"""GraphConv edge classifier with hand-derived reverse-mode gradients.

Three GraphConv layers (sum aggregation over neighbours, additive merge with
the node's own transform), each followed by ReLU, then inverted dropout, then
a single linear-plus-sigmoid edge scorer over a pair representation.

Two pair representations are available:

``"product"`` (default)
    ``(H_i * H_j) || |H_i - H_j|``. Symmetric by construction.
``"concat"``
    ``H_i || H_j`` averaged over both orders. A linear scorer on a
    concatenation reduces the same/different decision to the sign of
    ``t_i + t_j`` for a per-node scalar ``t``; two objects seen twice each
    cannot then be separated. Kept for comparison only.

Both keep the scorer weight at ``2 * hidden`` entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .detection import focal_loss, focal_loss_grad
from .errors import DimensionMismatch, EmptyGraph, NodeSetMismatch
from .graph import GtGraph, SceneGraph
from .optim import Adam

PAIRINGS = ("product", "concat")
AGGREGATIONS = ("sum", "mean")


@dataclass(eq=False)
class GraphConvLayer:
    w_self: np.ndarray   # [out, in]
    w_neigh: np.ndarray  # [out, in]
    bias: np.ndarray     # [out]

    @property
    def in_dim(self) -> int:
        return self.w_self.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_self.shape[0]


@dataclass(eq=False)
class EdgeScorer:
    w: np.ndarray  # [2 * hidden]
    b: np.ndarray  # shape (1,) so it can be updated in place


@dataclass(eq=False)
class GnnModel:
    layers: list[GraphConvLayer]
    scorer: EdgeScorer
    dropout_p: float = 0.2
    pairing: str = "product"
    aggregation: str = "mean"

    def __post_init__(self):
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.pairing not in PAIRINGS:
            raise ValueError(f"pairing must be one of {PAIRINGS}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise DimensionMismatch("consecutive layer dimensions disagree")
        if self.scorer.w.shape != (2 * self.layers[-1].out_dim,):
            raise DimensionMismatch("scorer width must be twice the hidden size")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def hidden_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> dict[str, np.ndarray]:
        """Named views of every trainable array (mutating them mutates the model)."""
        params = {}
        for k, layer in enumerate(self.layers):
            params[f"layers.{k}.w_self"] = layer.w_self
            params[f"layers.{k}.w_neigh"] = layer.w_neigh
            params[f"layers.{k}.bias"] = layer.bias
        params["scorer.w"] = self.scorer.w
        params["scorer.b"] = self.scorer.b
        return params


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 10
    alpha: float = 0.25
    gamma: float = 2.0
    seed: int = 0
    edge_threshold: float = 0.5
    refine_weight: float = 1.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape if shape is not None else (fan_out, fan_in))


def init_model(in_dim: int, hidden_dim: int = 64, seed: int = 0, dropout_p: float = 0.2,
               pairing: str = "product", aggregation: str = "mean", n_layers: int = 3) -> GnnModel:
    if in_dim <= 0 or hidden_dim <= 0:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    layers = []
    d = in_dim
    for _ in range(n_layers):
        layers.append(GraphConvLayer(
            w_self=_glorot(rng, hidden_dim, d),
            w_neigh=_glorot(rng, hidden_dim, d),
            bias=np.zeros(hidden_dim),
        ))
        d = hidden_dim
    scorer = EdgeScorer(w=_glorot(rng, 1, 2 * hidden_dim, shape=(2 * hidden_dim,)), b=np.zeros(1))
    return GnnModel(layers, scorer, dropout_p, pairing, aggregation)


def _edge_array(edges, n: int) -> np.ndarray:
    ei = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if ei.size and (ei.min() < 0 or ei.max() >= n):
        raise DimensionMismatch("edge references a node outside the graph")
    return ei


def _neighbour_sum(x: np.ndarray, ei: np.ndarray) -> np.ndarray:
    agg = np.zeros_like(x)
    np.add.at(agg, ei[:, 0], x[ei[:, 1]])
    np.add.at(agg, ei[:, 1], x[ei[:, 0]])
    return agg


def _inverse_degree(n: int, ei: np.ndarray, aggregation: str) -> np.ndarray:
    if aggregation == "sum":
        return np.ones(n)
    deg = np.bincount(ei.ravel(), minlength=n).astype(float)
    return np.divide(1.0, deg, out=np.zeros(n), where=deg > 0)


def graph_conv_forward(layer: GraphConvLayer, node_feats: np.ndarray, edges,
                       aggregation: str = "sum") -> np.ndarray:
    """``W_self h_v + W_neigh AGG_{w in N(v)} h_w + bias`` for every node ``v``.

    ``AGG`` is the neighbour sum, or with ``aggregation="mean"`` the sum
    divided by the degree. Isolated nodes receive no neighbour term.
    """
    x = np.asarray(node_feats, dtype=float)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise DimensionMismatch(f"expected [N, {layer.in_dim}] features, got {x.shape}")
    ei = _edge_array(edges, len(x))
    inv_deg = _inverse_degree(len(x), ei, aggregation)
    return x @ layer.w_self.T + (inv_deg[:, None] * _neighbour_sum(x, ei)) @ layer.w_neigh.T + layer.bias


def _score_pairs(model: GnnModel, h: np.ndarray, pairs: np.ndarray):
    hidden = model.hidden_dim
    w_a, w_b, b = model.scorer.w[:hidden], model.scorer.w[hidden:], model.scorer.b[0]
    hi, hj = h[pairs[:, 0]], h[pairs[:, 1]]
    if model.pairing == "product":
        prod, diff = hi * hj, hi - hj
        s = expit(prod @ w_a + np.abs(diff) @ w_b + b)
        return s, (hi, hj, prod, diff, s)
    s1 = expit(hi @ w_a + hj @ w_b + b)
    s2 = expit(hj @ w_a + hi @ w_b + b)
    return 0.5 * (s1 + s2), (hi, hj, s1, s2)


def _forward(model: GnnModel, x: np.ndarray, ei: np.ndarray, train: bool,
             rng: Optional[np.random.Generator]):
    inv_deg = _inverse_degree(len(x), ei, model.aggregation)
    cache = {"inputs": [], "aggregated": [], "pre": [], "inv_deg": inv_deg}
    h = x
    for layer in model.layers:
        agg = inv_deg[:, None] * _neighbour_sum(h, ei)
        pre = h @ layer.w_self.T + agg @ layer.w_neigh.T + layer.bias
        cache["inputs"].append(h)
        cache["aggregated"].append(agg)
        cache["pre"].append(pre)
        h = np.maximum(pre, 0.0)
    mask = None
    if train and model.dropout_p > 0:
        if rng is None:
            raise ValueError("train mode with dropout needs a random generator")
        mask = (rng.random(h.shape) >= model.dropout_p) / (1.0 - model.dropout_p)
        h = h * mask
    cache["mask"] = mask
    scores, cache["scorer"] = _score_pairs(model, h, ei)
    return h, scores, cache


def model_forward(model: GnnModel, graph: SceneGraph, mode: str = "eval",
                  rng: Optional[np.random.Generator] = None):
    """Node embeddings ``[N, hidden]`` and one probability per graph edge.

    Dropout is active only in ``mode="train"``.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    if graph.num_nodes == 0:
        raise EmptyGraph("graph has no nodes")
    x = graph.features
    if x.shape[1] != model.in_dim:
        raise DimensionMismatch(f"model expects {model.in_dim}-d node embeddings, got {x.shape[1]}")
    ei = _edge_array(graph.edges, graph.num_nodes)
    h, scores, _ = _forward(model, x, ei, mode == "train", rng)
    return h, scores


def _backward(model: GnnModel, ei: np.ndarray, cache: dict, d_scores: np.ndarray) -> dict[str, np.ndarray]:
    hidden = model.hidden_dim
    w_a, w_b = model.scorer.w[:hidden], model.scorer.w[hidden:]
    n = cache["pre"][-1].shape[0]
    d_h = np.zeros((n, hidden))
    grads: dict[str, np.ndarray] = {}

    if model.pairing == "product":
        hi, hj, prod, diff, s = cache["scorer"]
        dz = d_scores * s * (1 - s)
        grads["scorer.w"] = np.concatenate([prod.T @ dz, np.abs(diff).T @ dz])
        d_prod = dz[:, None] * w_a
        d_abs = dz[:, None] * w_b * np.sign(diff)
        d_hi = d_prod * hj + d_abs
        d_hj = d_prod * hi - d_abs
    else:
        hi, hj, s1, s2 = cache["scorer"]
        dz1 = 0.5 * d_scores * s1 * (1 - s1)
        dz2 = 0.5 * d_scores * s2 * (1 - s2)
        dz = dz1 + dz2
        grads["scorer.w"] = np.concatenate([hi.T @ dz1 + hj.T @ dz2, hj.T @ dz1 + hi.T @ dz2])
        d_hi = np.outer(dz1, w_a) + np.outer(dz2, w_b)
        d_hj = np.outer(dz1, w_b) + np.outer(dz2, w_a)
    grads["scorer.b"] = np.array([dz.sum()])
    np.add.at(d_h, ei[:, 0], d_hi)
    np.add.at(d_h, ei[:, 1], d_hj)

    if cache["mask"] is not None:
        d_h = d_h * cache["mask"]

    inv_deg = cache["inv_deg"][:, None]
    for k in reversed(range(len(model.layers))):
        layer = model.layers[k]
        h_in, pre = cache["inputs"][k], cache["pre"][k]
        d_pre = d_h * (pre > 0)
        grads[f"layers.{k}.w_self"] = d_pre.T @ h_in
        grads[f"layers.{k}.w_neigh"] = d_pre.T @ cache["aggregated"][k]
        grads[f"layers.{k}.bias"] = d_pre.sum(axis=0)
        # adjacency is symmetric, so the transpose of D^-1 A is A D^-1
        d_h = d_pre @ layer.w_self + _neighbour_sum(inv_deg * (d_pre @ layer.w_neigh), ei)
    return grads


def edge_loss_and_grads(model: GnnModel, graph: SceneGraph, gt: GtGraph, alpha: float = 0.25,
                        gamma: float = 2.0, train: bool = False,
                        rng: Optional[np.random.Generator] = None):
    """Mean focal loss over all graph edges and its gradient for every parameter."""
    if gt.num_nodes != graph.num_nodes:
        raise NodeSetMismatch(f"graph has {graph.num_nodes} nodes, ground truth {gt.num_nodes}")
    if graph.num_nodes == 0:
        raise EmptyGraph("graph has no nodes")
    ei = _edge_array(graph.edges, graph.num_nodes)
    _, scores, cache = _forward(model, graph.features, ei, train, rng)
    if len(ei) == 0:
        return 0.0, {k: np.zeros_like(v) for k, v in model.parameters().items()}, scores
    y = gt.labels(graph.edges)
    loss = float(np.mean(focal_loss(scores, y, alpha, gamma)))
    d_scores = focal_loss_grad(scores, y, alpha, gamma) / len(ei)
    return loss, _backward(model, ei, cache, d_scores), scores


def train_step(model: GnnModel, graph: SceneGraph, gt: GtGraph, cfg: TrainConfig,
               optimizer: Adam, rng: Optional[np.random.Generator] = None) -> float:
    """One optimizer step on a single scene graph; updates ``model`` in place and returns the loss."""
    loss, grads, _ = edge_loss_and_grads(model, graph, gt, cfg.alpha, cfg.gamma, train=True, rng=rng)
    optimizer.step(grads)
    return loss


def make_optimizer(model: GnnModel, lr: float = 1e-3, extra: Optional[dict] = None) -> Adam:
    params = dict(model.parameters())
    if extra:
        params.update(extra)
    return Adam(params, lr=lr)


def edge_accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    scores, labels = np.asarray(scores), np.asarray(labels)
    if scores.size == 0:
        return 1.0
    return float(np.mean((scores >= threshold).astype(int) == labels))
