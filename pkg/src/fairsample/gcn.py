"""K-layer mean-aggregation GCN classifier and its linear (SGCN) variant."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compgraph import Batch
from .graph import AttributedGraph
from .tensor import Tape, Tensor, glorot_uniform


@dataclass
class GcnParams:
    weights: list[np.ndarray]   # W_1..W_K
    head: np.ndarray            # W_c, shape (d_K, 2)

    @property
    def K(self) -> int:
        return len(self.weights)

    @classmethod
    def init(cls, d: int, hidden: int, K: int, rng: np.random.Generator,
             n_classes: int = 2) -> "GcnParams":
        dims = [d] + [hidden] * K
        weights = [glorot_uniform(rng, dims[l], dims[l + 1]) for l in range(K)]
        return cls(weights, glorot_uniform(rng, dims[-1], n_classes))

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {f"W{l + 1}": w for l, w in enumerate(self.weights)}
        out["Wc"] = self.head
        return out

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray]) -> "GcnParams":
        K = sum(1 for name in d if name.startswith("W") and name[1:].isdigit())
        return cls([np.asarray(d[f"W{l + 1}"], dtype=np.float64) for l in range(K)],
                   np.asarray(d["Wc"], dtype=np.float64))

    def copy(self) -> "GcnParams":
        return GcnParams([w.copy() for w in self.weights], self.head.copy())

    def register(self, tape: Tape) -> tuple[list[Tensor], Tensor]:
        ws = [tape.param(w, f"W{l + 1}") for l, w in enumerate(self.weights)]
        return ws, tape.param(self.head, "Wc")


def propagate(tape: Tape, h0: Tensor, aggs, ws: list[Tensor], head: Tensor):
    """Apply ``h^l = relu(agg_l h^{l-1} W_l)`` for each layer, then the linear head.

    Returns the logits and the list of hidden tensors ``[h^0, ..., h^K]``.
    """
    hs = [h0]
    h = h0
    for agg, w in zip(aggs, ws):
        h = tape.relu(tape.matmul(tape.row_mean(h, agg), w))
        hs.append(h)
    return tape.matmul(h, head), hs


def forward(g: AttributedGraph, params: GcnParams, batch: Batch, tape: Tape | None = None,
            registered=None):
    """Root logits, root class probabilities and per-level hidden tensors for a batch of trees.

    ``registered`` lets a caller pass already-registered parameter tensors so the
    same tape can hold further loss terms.
    """
    if batch.K != params.K:
        raise ValueError(f"computation graph depth {batch.K} != model depth {params.K}")
    tape = tape or Tape()
    ws, head = registered if registered is not None else params.register(tape)
    h0 = tape.const(g.features[batch.nodes[0]])
    logits, hs = propagate(tape, h0, batch.agg[1:], ws, head)
    return logits, tape.softmax(logits), hs


def forward_full(g: AttributedGraph, params: GcnParams, tape: Tape | None = None,
                 registered=None):
    """Whole-graph forward; equals tree evaluation on every full computation graph."""
    tape = tape or Tape()
    ws, head = registered if registered is not None else params.register(tape)
    p = g.mean_aggregation_matrix()
    logits, hs = propagate(tape, tape.const(g.features), [p] * params.K, ws, head)
    return logits, tape.softmax(logits), hs


def full_probabilities(g: AttributedGraph, params: GcnParams) -> np.ndarray:
    """Numpy-only inference path over the whole graph."""
    p = g.mean_aggregation_matrix()
    h = g.features
    for w in params.weights:
        h = np.maximum(p @ h @ w, 0.0)
    z = h @ params.head
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sgcn_forward(g: AttributedGraph, W: np.ndarray, K: int) -> np.ndarray:
    """Linear GCN logits ``(Ã X) W`` with Ã the K-step random-walk matrix."""
    from .theory import random_walk_matrix

    W = np.asarray(W, dtype=np.float64)
    if W.shape[0] != g.d:
        raise ValueError(f"W has {W.shape[0]} rows, features have {g.d} columns")
    return random_walk_matrix(g, K).walk @ g.features @ W


def predict(probs) -> np.ndarray:
    """Hard labels by argmax; ties go to class 0."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("probability rows must sum to 1")
    return np.argmax(p, axis=1).astype(np.int64)


# -- checkpoints -----------------------------------------------------------
# {"format": "fairsample-checkpoint/1", "tensors": {name: {"shape": [r, c], "data": [...]}}}
# with row-major data; floats are written with repr so values round-trip exactly.

CHECKPOINT_FORMAT = "fairsample-checkpoint/1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], extra: dict | None = None) -> None:
    body = {"format": CHECKPOINT_FORMAT,
            "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                        for k, v in tensors.items()}}
    if extra:
        body["meta"] = extra
    Path(path).write_text(json.dumps(body) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    body = json.loads(Path(path).read_text(encoding="utf-8"))
    if body.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    tensors = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
               for k, v in body["tensors"].items()}
    return tensors, body.get("meta", {})


__all__ = ["GcnParams", "forward", "forward_full", "full_probabilities", "propagate",
           "sgcn_forward", "predict", "save_checkpoint", "load_checkpoint"]
