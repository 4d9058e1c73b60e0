"""Accuracy / demographic-parity metrics and model-selection helpers."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .graph import AttributedGraph


@dataclass
class EvalResult:
    accuracy: float
    delta_dp: float
    group_rates: list[float | None]   # positive-prediction rate per group, None if no members
    group_counts: list[int]

    def to_dict(self) -> dict:
        return asdict(self)


def group_positive_rates(preds, groups, zeta: int) -> tuple[list[float | None], list[int]]:
    preds = np.asarray(preds)
    groups = np.asarray(groups)
    rates: list[float | None] = []
    counts: list[int] = []
    for a in range(zeta):
        m = groups == a
        counts.append(int(m.sum()))
        rates.append(float(preds[m].mean()) if m.any() else None)
    return rates, counts


def delta_dp(preds, groups, zeta: int | None = None) -> float:
    """Largest pairwise gap in positive-prediction rate across non-empty groups."""
    groups = np.asarray(groups, dtype=np.int64)
    zeta = int(groups.max()) + 1 if zeta is None else zeta
    rates, _ = group_positive_rates(preds, groups, zeta)
    present = [r for r in rates if r is not None]
    if not present:
        raise ValueError("no group members")
    return float(max(present) - min(present))


def evaluate(g: AttributedGraph, params, nodes, mode: str = "full", *, policy=None,
             k: int | None = None, seed: int = 0) -> EvalResult:
    """Hard-prediction accuracy (over labeled members) and ΔDP (over all members).

    ``mode="full"`` uses unsampled computation graphs; ``mode="sampled"`` draws
    trees with ``policy`` and fanout ``k``.
    """
    from .gcn import full_probabilities, predict

    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty node set")
    if mode == "full":
        probs = full_probabilities(g, params)[nodes]
    elif mode == "sampled":
        from .trainer import sampled_probabilities
        if policy is None or k is None:
            raise ValueError("sampled evaluation needs a policy and fanout")
        probs = sampled_probabilities(g, params, policy, nodes, k, seed)
    else:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    pred = predict(probs)
    y = g.labels[nodes]
    lab = y >= 0
    acc = float(np.mean(pred[lab] == y[lab])) if lab.any() else float("nan")
    rates, counts = group_positive_rates(pred, g.sensitive[nodes], g.zeta)
    present = [r for r in rates if r is not None]
    return EvalResult(acc, float(max(present) - min(present)), rates, counts)


def select_hyperparameters(runs: Sequence[tuple], acc_best: float | None = None,
                           threshold: float = 0.95):
    """Two-step rule: keep runs within ``threshold`` of the best mean validation
    accuracy, then take the smallest mean validation ΔDP.

    ``runs`` holds ``(config_id, mean_val_acc, mean_val_dp)`` tuples.  When no
    run clears the bar the most accurate one wins.  Ties go to the
    lexicographically smallest id.  ``acc_best`` may be supplied to share the
    bar across several methods.
    """
    if not runs:
        raise ValueError("no runs to select from")
    best = max(r[1] for r in runs) if acc_best is None else acc_best
    bar = best * threshold
    passing = [r for r in runs if r[1] >= bar]
    if passing:
        return min(passing, key=lambda r: (r[2], str(r[0])))[0]
    return min(runs, key=lambda r: (-r[1], str(r[0])))[0]


def pareto_frontier(points: Sequence[tuple[float, float]]) -> list[int]:
    """Indices of (accuracy, ΔDP) points not dominated by any other point."""
    pts = list(points)
    if not pts:
        raise ValueError("no points")
    order = sorted(range(len(pts)), key=lambda i: (-pts[i][0], pts[i][1]))
    keep: list[int] = []
    best_dp = np.inf
    i = 0
    while i < len(order):
        # group equal accuracies; inside a group only the smallest ΔDP can survive
        j = i
        acc = pts[order[i]][0]
        while j < len(order) and pts[order[j]][0] == acc:
            j += 1
        group_min = pts[order[i]][1]
        # a more accurate point with ΔDP <= group_min dominates the whole group
        if group_min < best_dp:
            keep.extend(o for o in order[i:j] if pts[o][1] == group_min)
            best_dp = group_min
        i = j
    return sorted(keep)


__all__ = ["EvalResult", "delta_dp", "group_positive_rates", "evaluate",
           "select_hyperparameters", "pareto_frontier"]
