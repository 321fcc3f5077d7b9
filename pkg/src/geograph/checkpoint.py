"""JSON checkpoints for the edge classifier, refinement net and optimizer state.

Tensors are stored as ``{"shape": [...], "data": [...]}`` with data in
row-major order. Floats are written with ``repr`` precision, so a
write/read round trip is bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SchemaError
from .geoloc import RefineNet
from .gnn import EdgeScorer, GnnModel, GraphConvLayer
from .optim import Adam

CHECKPOINT_FORMAT = "geograph-checkpoint/1"


@dataclass
class Checkpoint:
    model: GnnModel
    refine_net: RefineNet
    optimizer_state: Optional[dict] = None
    graph_options: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _tensor(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=float)
    return {"shape": list(a.shape), "data": [float(x) for x in a.ravel(order="C")]}


def _array(rec: dict, name: str) -> np.ndarray:
    try:
        return np.array(rec["data"], dtype=float).reshape(rec["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"checkpoint tensor '{name}' is malformed: {exc}") from exc


def save_checkpoint(path, model: GnnModel, net: RefineNet, optimizer: Optional[Adam] = None,
                    graph_options: Optional[dict] = None, meta: Optional[dict] = None) -> None:
    params = {**model.parameters(), **net.parameters()}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "meta": meta or {},
        "model": {
            "in_dim": model.in_dim,
            "hidden_dim": model.hidden_dim,
            "n_layers": len(model.layers),
            "dropout_p": model.dropout_p,
            "pairing": model.pairing,
            "aggregation": model.aggregation,
        },
        "graph_options": graph_options or {},
        "tensors": {name: _tensor(p) for name, p in params.items()},
        "optimizer": None,
    }
    if optimizer is not None:
        doc["optimizer"] = {
            "t": optimizer.t,
            "lr": optimizer.lr,
            "m": {k: _tensor(v) for k, v in optimizer.m.items()},
            "v": {k: _tensor(v) for k, v in optimizer.v.items()},
        }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")), encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"checkpoint is not valid JSON: {exc.msg}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"unsupported checkpoint format {doc.get('format')!r}")
    try:
        arch, tensors = doc["model"], doc["tensors"]
        layers = [
            GraphConvLayer(
                _array(tensors[f"layers.{k}.w_self"], f"layers.{k}.w_self"),
                _array(tensors[f"layers.{k}.w_neigh"], f"layers.{k}.w_neigh"),
                _array(tensors[f"layers.{k}.bias"], f"layers.{k}.bias"),
            )
            for k in range(arch["n_layers"])
        ]
        scorer = EdgeScorer(_array(tensors["scorer.w"], "scorer.w"), _array(tensors["scorer.b"], "scorer.b"))
        model = GnnModel(layers, scorer, arch["dropout_p"], arch["pairing"], arch["aggregation"])
        net = RefineNet(*(_array(tensors[f"refine.{k}"], f"refine.{k}") for k in ("w1", "b1", "w2", "b2")))
    except KeyError as exc:
        raise SchemaError(f"checkpoint is missing field {exc}") from exc
    opt = doc.get("optimizer")
    if opt is not None:
        opt = {
            "t": opt["t"],
            "lr": opt["lr"],
            "m": {k: _array(v, f"optimizer.m.{k}") for k, v in opt["m"].items()},
            "v": {k: _array(v, f"optimizer.v.{k}") for k, v in opt["v"].items()},
        }
    return Checkpoint(model, net, opt, doc.get("graph_options", {}), doc.get("meta", {}))
