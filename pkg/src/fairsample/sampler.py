"""Child-sampling policies for computation graphs.

``fairsample`` mixes a feature-similarity score with a minority-boosting score
through a learned attention vector and normalizes with a softmax over the
parent's neighbors.  ``uniform`` and ``stratified`` are fixed baselines.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compgraph import Batch
from .graph import AttributedGraph
from .tensor import Tape, glorot_uniform

VARIANTS = ("fairsample", "uniform", "stratified")


@dataclass
class SamplerPolicy:
    variant: str = "fairsample"
    Ws: np.ndarray | None = None        # (d, d_s)
    a: np.ndarray | None = None         # (2,): weights of (q_sim, q_fair)
    learn_attention: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown sampler variant {self.variant!r}")
        if self.variant == "fairsample":
            if self.Ws is None or self.a is None:
                raise ValueError("fairsample policy needs Ws and a")
            self.Ws = np.asarray(self.Ws, dtype=np.float64)
            self.a = np.asarray(self.a, dtype=np.float64).reshape(2)
            if not (np.all(np.isfinite(self.Ws)) and np.all(np.isfinite(self.a))):
                raise ValueError("non-finite sampler parameters")

    @classmethod
    def create(cls, variant: str, d: int, rng: np.random.Generator, d_s: int = 16,
               attention=(1.0, 1.0), learn_attention: bool = True,
               ws_scale: float = 0.1) -> "SamplerPolicy":
        """Fresh policy; ``W_s`` is Glorot-uniform times ``ws_scale``."""
        if variant != "fairsample":
            return cls(variant)
        return cls(variant, ws_scale * glorot_uniform(rng, d, d_s),
                   np.array(attention, dtype=np.float64), learn_attention)

    @property
    def learnable(self) -> bool:
        return self.variant == "fairsample"

    def as_dict(self) -> dict[str, np.ndarray]:
        if not self.learnable:
            return {}
        return {"Ws": self.Ws, "a": self.a.reshape(1, 2)}

    def copy(self) -> "SamplerPolicy":
        if not self.learnable:
            return SamplerPolicy(self.variant)
        return SamplerPolicy(self.variant, self.Ws.copy(), self.a.copy(), self.learn_attention)

    def edge_probabilities(self, g: AttributedGraph) -> np.ndarray:
        """Child distribution for every CSR slot, aligned with ``g.indices``."""
        if self.variant == "uniform":
            return 1.0 / np.repeat(g.degree, g.degree).astype(np.float64)
        src = np.repeat(np.arange(g.n), g.degree)
        counts = g.group_counts[src, g.sensitive[g.indices]].astype(np.float64)
        if self.variant == "stratified":
            present = (g.group_counts > 0).sum(axis=1)[src]
            return 1.0 / (present * counts)
        z = g.features @ self.Ws
        q = self.a[0] * np.einsum("ij,ij->i", z[src], z[g.indices]) + self.a[1] / counts
        return _segment_softmax(q, g.indptr)


def _segment_softmax(q: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    out = np.zeros_like(q)
    starts = indptr[:-1]
    nz = np.flatnonzero(np.diff(indptr) > 0)
    if q.size == 0:
        return out
    seg = np.repeat(np.arange(indptr.size - 1), np.diff(indptr))
    mx = np.full(indptr.size - 1, -np.inf)
    mx[nz] = np.maximum.reduceat(q, starts[nz])
    e = np.exp(q - mx[seg])
    tot = np.zeros(indptr.size - 1)
    tot[nz] = np.add.reduceat(e, starts[nz])
    return e / tot[seg]


def q_sim(policy: SamplerPolicy, g: AttributedGraph, i: int, j: int) -> float:
    zi = g.features[i] @ policy.Ws
    zj = g.features[j] @ policy.Ws
    return float(zi @ zj)


def q_fair(g: AttributedGraph, i: int, j: int) -> float:
    """Reciprocal of how many neighbors of ``i`` share ``j``'s sensitive value."""
    if j not in set(g.neighbors(i).tolist()):
        raise ValueError(f"node {j} is not a neighbor of {i}")
    return 1.0 / g.group_counts[i, g.sensitive[j]]


def child_distribution(policy: SamplerPolicy, g: AttributedGraph, v: int):
    """Candidates ``Γ_v`` and the policy's probability for each."""
    cand = g.neighbors(v)
    if cand.size == 0:
        raise ValueError(f"node {v} has no neighbors")
    if policy.variant == "uniform":
        return cand, np.full(cand.size, 1.0 / cand.size)
    counts = g.group_counts[v, g.sensitive[cand]].astype(np.float64)
    if policy.variant == "stratified":
        present = int((g.group_counts[v] > 0).sum())
        return cand, 1.0 / (present * counts)
    q = np.array([policy.a[0] * q_sim(policy, g, v, int(u)) + policy.a[1] / c
                  for u, c in zip(cand, counts)])
    e = np.exp(q - q.max())
    return cand, e / e.sum()


def surrogate(policy: SamplerPolicy, g: AttributedGraph, batch: Batch,
              grad_h1: np.ndarray, W1: np.ndarray, tape: Tape | None = None):
    """Policy-gradient surrogate whose θ-gradient estimates dL/dθ.

    ``S = mean over level-1 positions i of
    mean over sampled children j of  log P(j|i) * <dL/dh1_i, x_j W1>``.
    ``grad_h1`` and ``W1`` enter as constants.  Returns ``(S, tape)``; the tape
    has ``Ws`` and ``a`` registered.
    """
    tape = tape or Tape()
    Ws = tape.param(policy.Ws, "Ws")
    a = tape.param(policy.a.reshape(2, 1), "a")
    if batch.K < 1:
        return tape.const(0.0), tape
    pos_nodes = batch.nodes[1]
    n_pos = pos_nodes.size
    if grad_h1.shape[0] != n_pos:
        raise ValueError("dL/dh1 must have one row per level-1 position")
    par, child = batch.level_children(1)

    deg = g.degree[pos_nodes]
    active = np.flatnonzero(deg > 0)
    if active.size == 0 or par.size == 0:
        return tape.const(0.0), tape
    # candidate rows: every neighbor of every active level-1 position
    lens = deg[active]
    ptr = np.concatenate([[0], np.cumsum(lens)])
    src_pos = np.repeat(active, lens)
    slot = np.repeat(g.indptr[pos_nodes[active]] - ptr[:-1], lens) + np.arange(ptr[-1])
    cand = g.indices[slot]
    src_node = pos_nodes[src_pos]
    counts = g.group_counts[src_node, g.sensitive[cand]].astype(np.float64)

    # row of each sampled (position, child) pair inside the candidate block
    row_of_pos = np.full(n_pos, -1, dtype=np.int64)
    row_of_pos[active] = ptr[:-1]
    # neighbor lists are sorted, so (row, neighbor) keys are globally sorted
    edge_key = np.repeat(np.arange(g.n), g.degree) * g.n + g.indices
    found = np.searchsorted(edge_key, pos_nodes[par] * g.n + child)
    rows = row_of_pos[par] + (found - g.indptr[pos_nodes[par]])
    n_children = np.bincount(par, minlength=n_pos)
    coef = np.einsum("ij,ij->i", grad_h1[par], g.features[child] @ W1)
    w = np.zeros(cand.size)
    np.add.at(w, rows, coef / (n_children[par] * n_pos))

    zs = tape.matmul(tape.const(g.features[src_node]), Ws)
    zc = tape.matmul(tape.const(g.features[cand]), Ws)
    sim = tape.rowdot(zs, zc)
    if policy.learn_attention:
        q = tape.matmul(tape.concat(sim, tape.const(1.0 / counts)), a)
    else:
        fixed = tape.const(policy.a.reshape(2, 1))
        q = tape.matmul(tape.concat(sim, tape.const(1.0 / counts)), fixed)
    logp = tape.segment_log_softmax(q, ptr)
    return tape.weighted_sum(logp, w[:, None]), tape


def policy_gradient_step(policy: SamplerPolicy, g: AttributedGraph, batch: Batch,
                         grad_h1: np.ndarray, W1: np.ndarray) -> dict[str, np.ndarray]:
    """Gradient of the surrogate w.r.t. the policy parameters (empty for fixed policies)."""
    if not policy.learnable:
        return {}
    s, tape = surrogate(policy, g, batch, grad_h1, W1)
    if not s.requires_grad:
        return {"Ws": np.zeros_like(policy.Ws), "a": np.zeros((2, 1))}
    grads = tape.backward(s)
    if not policy.learn_attention:
        grads["a"] = np.zeros((2, 1))
    return grads


__all__ = ["SamplerPolicy", "VARIANTS", "q_sim", "q_fair", "child_distribution",
           "surrogate", "policy_gradient_step"]
