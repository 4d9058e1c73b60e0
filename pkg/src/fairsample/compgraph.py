"""Per-root computation trees, full or down-sampled top-down.

A tree of depth K stores one array of positions per level, level K holding the
root and level 0 the leaves.  Every position at level l >= 1 owns a *self*
position at level l-1 (the ``{v}`` term of the aggregation) followed by its
distinct sampled children; both are contiguous in the level below, so a
parent's block is ``[self, child_1, ..., child_c]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp

from .graph import AttributedGraph


class ChildSampler(Protocol):
    def edge_probabilities(self, g: AttributedGraph) -> np.ndarray:
        """Probability of each CSR neighbor slot ``g.indices[e]`` given its row node."""


@dataclass
class Level:
    nodes: np.ndarray            # graph node id per position
    parent: np.ndarray           # parent position index in the level above (-1 for root)
    is_self: np.ndarray          # True for the self-term copy of the parent
    # sampling trace for positions of this level that were expanded (level >= 1)
    draws: np.ndarray | None = None   # (positions, k) raw drawn node ids, -1 where Γ is empty
    draw_probs: np.ndarray | None = None


@dataclass
class ComputationGraph:
    root: int
    K: int
    levels: list[Level] = field(default_factory=list)  # levels[l], l = 0..K
    fanout: int | None = None

    def positions(self, level: int) -> np.ndarray:
        return self.levels[level].nodes

    def children(self, level: int, pos: int) -> np.ndarray:
        """Graph node ids of the non-self children of a position (empty at level 0)."""
        if level == 0:
            return np.empty(0, dtype=np.int64)
        below = self.levels[level - 1]
        mask = (below.parent == pos) & ~below.is_self
        return below.nodes[mask]

    def size(self) -> int:
        return int(sum(lv.nodes.size for lv in self.levels))

    def to_json(self, g: AttributedGraph | None = None, probs: np.ndarray | None = None) -> str:
        """Debug dump: positions per level with ids, parents and sampling probabilities."""
        out = {"root": self.root, "K": self.K, "fanout": self.fanout, "levels": []}
        for l in range(self.K, -1, -1):
            lv = self.levels[l]
            rows = []
            for i in range(lv.nodes.size):
                row = {"pos": i, "node": int(lv.nodes[i]), "parent": int(lv.parent[i]),
                       "self": bool(lv.is_self[i])}
                if g is not None and probs is not None and l >= 1:
                    u = int(lv.nodes[i])
                    lo, hi = g.indptr[u], g.indptr[u + 1]
                    row["candidates"] = {int(c): float(p) for c, p in zip(g.indices[lo:hi], probs[lo:hi])}
                rows.append(row)
            out["levels"].append({"level": l, "positions": rows})
        return json.dumps(out, indent=1)


def _expand(nodes: np.ndarray, kids: list[np.ndarray]):
    """Next level arrays: each parent's self copy followed by its children."""
    counts = np.array([1 + c.size for c in kids], dtype=np.int64)
    parent = np.repeat(np.arange(nodes.size), counts)
    nxt = np.empty(int(counts.sum()), dtype=np.int64)
    is_self = np.zeros(nxt.size, dtype=bool)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    is_self[starts] = True
    nxt[starts] = nodes
    for st, c in zip(starts, kids):
        nxt[st + 1:st + 1 + c.size] = c
    return nxt, parent, is_self


def build_full(g: AttributedGraph, root: int, K: int) -> ComputationGraph:
    if not 0 <= root < g.n:
        raise KeyError(f"unknown root {root}")
    if K < 0:
        raise ValueError("K must be >= 0")
    top = Level(np.array([root]), np.array([-1]), np.array([False]))
    levels = [top]
    for _ in range(K):
        cur = levels[-1].nodes
        kids = [g.neighbors(int(u)).astype(np.int64) for u in cur]
        nodes, parent, is_self = _expand(cur, kids)
        levels.append(Level(nodes, parent, is_self))
    return ComputationGraph(root, K, levels[::-1])


def cumulative_keys(g: AttributedGraph, probs: np.ndarray) -> np.ndarray:
    """Sorted search keys ``row + cumulative probability within the row``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != g.indices.shape:
        raise ValueError("edge probabilities must align with the CSR neighbor array")
    if np.any(probs < 0):
        raise ValueError("policy returned negative probability mass")
    row = np.repeat(np.arange(g.n), g.degree)
    sums = np.zeros(g.n)
    np.add.at(sums, row, probs)
    nz = g.degree > 0
    if np.any(np.abs(sums[nz] - 1.0) > 1e-9):
        raise ValueError("policy distribution not normalized within 1e-9")
    csum = np.cumsum(probs)
    start = np.concatenate([[0.0], csum])[g.indptr[:-1]]
    within = csum - start[row]
    return row + np.minimum(within, 1.0)


def draw_children(g: AttributedGraph, keys: np.ndarray, nodes: np.ndarray, k: int,
                  rng: np.random.Generator) -> np.ndarray:
    """``k`` i.i.d. neighbor draws (with replacement) per node; ``-1`` rows for isolated nodes."""
    nodes = np.asarray(nodes, dtype=np.int64)
    out = np.full((nodes.size, k), -1, dtype=np.int64)
    r = rng.random((nodes.size, k))
    has = g.degree[nodes] > 0
    if not np.any(has):
        return out
    u = nodes[has]
    slot = np.searchsorted(keys, u[:, None] + r[has], side="right")
    lo = g.indptr[u][:, None]
    hi = g.indptr[u + 1][:, None] - 1
    slot = np.clip(slot, lo, hi)
    out[has] = g.indices[slot]
    return out


def _dedupe_rows(draws: np.ndarray) -> list[np.ndarray]:
    srt = np.sort(draws, axis=1)
    keep = np.ones(srt.shape, dtype=bool)
    keep[:, 1:] = srt[:, 1:] != srt[:, :-1]
    keep &= srt >= 0
    return [row[m] for row, m in zip(srt, keep)]


def build_sampled(g: AttributedGraph, root: int, K: int, k: int, probs: np.ndarray,
                  rng: np.random.Generator, keys: np.ndarray | None = None) -> ComputationGraph:
    """Down-sample the computation tree of ``root`` breadth-first.

    ``probs`` gives the child distribution of every CSR slot (see
    :class:`ChildSampler`).  Each position draws ``k`` children with
    replacement; duplicates are discarded and the raw draws kept in the trace.
    """
    if not 0 <= root < g.n:
        raise KeyError(f"unknown root {root}")
    if k < 1:
        raise ValueError("fanout k must be >= 1")
    if keys is None:
        keys = cumulative_keys(g, probs)
    levels = [Level(np.array([root]), np.array([-1]), np.array([False]))]
    for _ in range(K):
        cur = levels[-1]
        draws = draw_children(g, keys, cur.nodes, k, rng)
        cur.draws = draws
        cur.draw_probs = probs
        nodes, parent, is_self = _expand(cur.nodes, _dedupe_rows(draws))
        levels.append(Level(nodes, parent, is_self))
    return ComputationGraph(root, K, levels[::-1], fanout=k)


class Batch:
    """Several trees flattened level-wise with constant averaging matrices.

    ``agg[l]`` maps level l-1 rows to level l rows (l = 1..K): row p averages
    its self position and its distinct children with weight ``1/(c+1)``.
    """

    def __init__(self, trees: list[ComputationGraph]):
        if not trees:
            raise ValueError("empty batch")
        K = trees[0].K
        if any(t.K != K for t in trees):
            raise ValueError("trees in a batch must share depth")
        self.K = K
        self.trees = trees
        self.roots = np.array([t.root for t in trees], dtype=np.int64)
        self.nodes: list[np.ndarray] = []
        self.parent: list[np.ndarray] = []
        self.is_self: list[np.ndarray] = []
        for l in range(K + 1):
            offs_above = 0
            nodes, parents, selfs = [], [], []
            for t in trees:
                lv = t.levels[l]
                nodes.append(lv.nodes)
                selfs.append(lv.is_self)
                if l < K:
                    parents.append(lv.parent + offs_above)
                    offs_above += t.levels[l + 1].nodes.size
                else:
                    parents.append(lv.parent)
            self.nodes.append(np.concatenate(nodes))
            self.parent.append(np.concatenate(parents))
            self.is_self.append(np.concatenate(selfs))
        self.agg: list[sp.csr_matrix | None] = [None]
        for l in range(1, K + 1):
            par = self.parent[l - 1]
            n_up = self.nodes[l].size
            counts = np.bincount(par, minlength=n_up)
            w = 1.0 / counts[par]
            self.agg.append(sp.csr_matrix((w, (par, np.arange(par.size))),
                                          shape=(n_up, par.size)))

    def level_children(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        """(parent position, child node id) pairs for non-self children feeding ``level``."""
        below = level - 1
        mask = ~self.is_self[below]
        return self.parent[below][mask], self.nodes[below][mask]


__all__ = ["ChildSampler", "ComputationGraph", "Level", "Batch", "build_full",
           "build_sampled", "cumulative_keys", "draw_children"]
