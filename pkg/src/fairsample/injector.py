"""Label-aware edge injection.

Each (pseudo-)labeled node connects to up to ``m`` nodes within ``h`` hops that
share its class label and, on homophilic graphs, sit in a different sensitive
group (same group on heterophilic graphs).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gcn import GcnParams, full_probabilities
from .graph import UNLABELED, AttributedGraph, homophily_mode, hop_distances

MODES = ("auto", "homophilic", "heterophilic")


@dataclass
class PseudoLabelSet:
    labels: np.ndarray        # pseudo label per node, -1 where none was kept
    confidence: np.ndarray    # max softmax probability per node (nan for known nodes)
    tau: float

    @property
    def count(self) -> int:
        return int(np.sum(self.labels >= 0))


@dataclass
class InjectionReport:
    m: int
    h: int
    tau: float | None
    mode: str
    seed: int | None
    edges: list[dict] = field(default_factory=list)
    initiated: dict[int, int] = field(default_factory=dict)
    pseudo_labeled: int = 0

    def to_dict(self) -> dict:
        return {"m": self.m, "h": self.h, "tau": self.tau, "mode": self.mode, "seed": self.seed,
                "pseudo_labeled": self.pseudo_labeled, "num_edges": len(self.edges),
                "edges": self.edges,
                "initiated": {str(k): v for k, v in sorted(self.initiated.items())}}


def pseudo_label(g: AttributedGraph, predictor: GcnParams, tau: float,
                 known: np.ndarray | None = None) -> PseudoLabelSet:
    """Confident predictions for every node without a known label.

    ``known`` is the label array treated as ground truth (defaults to the
    graph's labels); a prediction is kept when its softmax confidence exceeds
    ``tau``.
    """
    if not 0.5 < tau < 1.0:
        raise ValueError("tau must lie in (0.5, 1)")
    known = g.labels if known is None else np.asarray(known, dtype=np.int64)
    probs = full_probabilities(g, predictor)
    conf = probs.max(axis=1)
    pred = np.argmax(probs, axis=1)
    unknown = known == UNLABELED
    keep = unknown & (conf > tau)
    labels = np.where(keep, pred, UNLABELED).astype(np.int64)
    return PseudoLabelSet(labels, np.where(unknown, conf, np.nan), tau)


def _resolve_mode(g: AttributedGraph, mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown injection mode {mode!r}")
    return homophily_mode(g) if mode == "auto" else mode


def candidate_set(g: AttributedGraph, v: int, labels, h: int = 2, mode: str = "homophilic",
                  exclude=(), distances: dict[int, int] | None = None) -> set[int]:
    """Same-label nodes within ``h`` hops of ``v`` in the required group relation.

    Existing neighbors of ``v``, ``v`` itself and ``exclude`` are left out.
    """
    labels = np.asarray(labels)
    if labels[v] == UNLABELED:
        raise ValueError(f"node {v} has no (pseudo) label")
    mode = _resolve_mode(g, mode)
    dist = hop_distances(g, v, h) if distances is None else distances
    s = g.sensitive
    out = set()
    for u, d in dist.items():
        if d < 2 or u in exclude or labels[u] != labels[v]:
            continue
        if (s[u] != s[v]) if mode == "homophilic" else (s[u] == s[v]):
            out.add(u)
    return out


def inject(g: AttributedGraph, m: int, h: int = 2, tau: float | None = 0.8,
           predictor: GcnParams | None = None, mode: str = "auto", rng=None,
           known: np.ndarray | None = None, seed: int | None = None):
    """Return the enriched graph and an :class:`InjectionReport`.

    Labels come from ``known`` (default: the graph's labels) plus, when a
    ``predictor`` is given, its pseudo labels above ``tau``.  Nodes are visited
    in ascending id order and draw their partners uniformly without replacement.
    """
    if m < 0 or h < 1:
        raise ValueError("need m >= 0 and h >= 1")
    mode = _resolve_mode(g, mode)
    if rng is None:
        rng = np.random.default_rng(seed)
    report = InjectionReport(m, h, tau, mode, seed)
    if m == 0:
        return g, report
    labels = (g.labels if known is None else np.asarray(known, dtype=np.int64)).copy()
    if predictor is not None:
        pl = pseudo_label(g, predictor, tau, known=labels)
        labels = np.where(labels == UNLABELED, pl.labels, labels)
        report.pseudo_labeled = pl.count

    added: dict[int, set[int]] = {}
    new_edges: list[tuple[int, int]] = []
    for v in np.flatnonzero(labels != UNLABELED):
        v = int(v)
        dist = hop_distances(g, v, h)
        cand = candidate_set(g, v, labels, h, mode, exclude=added.get(v, ()), distances=dist)
        if not cand:
            continue
        pool = np.array(sorted(cand), dtype=np.int64)
        take = min(m, pool.size)
        picks = rng.choice(pool, size=take, replace=False)
        for u in picks:
            u = int(u)
            added.setdefault(v, set()).add(u)
            added.setdefault(u, set()).add(v)
            new_edges.append((v, u))
            report.edges.append({"u": v, "v": u, "hops": dist[u], "label": int(labels[v]),
                                 "s_u": int(g.sensitive[v]), "s_v": int(g.sensitive[u])})
        report.initiated[v] = take
    if not new_edges:
        return g, report
    return g.with_edges(new_edges), report


__all__ = ["PseudoLabelSet", "InjectionReport", "MODES", "pseudo_label", "candidate_set", "inject"]
