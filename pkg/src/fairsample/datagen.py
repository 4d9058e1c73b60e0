"""Synthetic biased graphs from a stochastic block model over sensitive groups.

Knobs map onto the bias terms of the SGCN bound: the group-pair edge
probabilities set the structure bias, the per-(label, group) feature means set
the attribute bias and the noise scale sets the within-group deviation.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import UNLABELED, AttributedGraph, DataSplit, draw_split


@dataclass
class SbmSpec:
    n: int = 2000
    group_sizes: list[int] = field(default_factory=lambda: [1000, 1000])
    p_intra: float = 0.008
    p_inter: float = 0.0009
    # optional full group-pair probability matrix; overrides p_intra/p_inter
    p_matrix: list[list[float]] | None = None
    # edge probability multiplier for same-label pairs (1 = labels ignored)
    label_affinity: float = 2.0
    d: int = 16
    class_signal: float = 1.0
    group_signal: float = 0.7
    # cosine between the group offset and the class direction
    group_class_alignment: float = 1.0
    noise: float = 1.5
    # optional explicit means keyed "y,s"; overrides the signal knobs
    means: dict[str, list[float]] | None = None
    label_rates: list[float] = field(default_factory=lambda: [0.6, 0.4])
    labeled_fraction: float = 0.5
    n_train: int = 300
    val_fraction: float = 0.25
    test_fraction: float = 0.25
    seed: int = 0
    name: str | None = "sbm"

    def __post_init__(self):
        if sum(self.group_sizes) != self.n:
            raise ValueError(f"group sizes sum to {sum(self.group_sizes)}, expected n={self.n}")
        if len(self.group_sizes) < 2 or min(self.group_sizes) < 1:
            raise ValueError("need at least two non-empty groups")
        if len(self.label_rates) != len(self.group_sizes):
            raise ValueError("one label rate per group required")
        probs = [self.p_intra, self.p_inter] + [p for row in (self.p_matrix or []) for p in row]
        probs += list(self.label_rates) + [self.labeled_fraction]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if not 0.0 <= self.group_class_alignment <= 1.0:
            raise ValueError("group_class_alignment must lie in [0, 1]")
        if self.label_affinity < 0 or self.noise < 0:
            raise ValueError("label_affinity and noise must be non-negative")

    @property
    def zeta(self) -> int:
        return len(self.group_sizes)

    def group_matrix(self) -> np.ndarray:
        if self.p_matrix is not None:
            P = np.array(self.p_matrix, dtype=np.float64)
            if P.shape != (self.zeta, self.zeta) or not np.allclose(P, P.T):
                raise ValueError("p_matrix must be symmetric zeta x zeta")
            return P
        P = np.full((self.zeta, self.zeta), self.p_inter)
        np.fill_diagonal(P, self.p_intra)
        return P

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SbmSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "SbmSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def feature_means(spec: SbmSpec, rng: np.random.Generator) -> np.ndarray:
    """Mean vector per (label, group), shape (2, zeta, d)."""
    if spec.means is not None:
        out = np.zeros((2, spec.zeta, spec.d))
        for y in range(2):
            for s in range(spec.zeta):
                out[y, s] = spec.means[f"{y},{s}"]
        return out
    class_dir = rng.normal(size=spec.d)
    class_dir /= np.linalg.norm(class_dir)
    group_dirs = rng.normal(size=(spec.zeta, spec.d))
    group_dirs -= np.outer(group_dirs @ class_dir, class_dir)
    group_dirs /= np.linalg.norm(group_dirs, axis=1, keepdims=True)
    c = spec.group_class_alignment
    # group a's offset leans +class for a = 0 and -class otherwise, so aligned
    # offsets read as label evidence
    sign = np.where(np.arange(spec.zeta) == 0, 1.0, -1.0)
    group_dirs = c * sign[:, None] * class_dir + np.sqrt(1.0 - c * c) * group_dirs
    out = np.zeros((2, spec.zeta, spec.d))
    for y in range(2):
        for s in range(spec.zeta):
            out[y, s] = spec.class_signal * (2 * y - 1) * class_dir + spec.group_signal * group_dirs[s]
    return out


def _block_pairs(rng, idx_a: np.ndarray, idx_b: np.ndarray | None, p: float) -> np.ndarray:
    """Bernoulli(p) edges within one block (idx_b None) or between two blocks."""
    if p <= 0:
        return np.empty((0, 2), dtype=np.int64)
    if idx_b is None:
        na = idx_a.size
        total = na * (na - 1) // 2
        if total == 0:
            return np.empty((0, 2), dtype=np.int64)
        flat = rng.choice(total, size=rng.binomial(total, p), replace=False)
        iu, ju = np.triu_indices(na, 1)
        return np.stack([idx_a[iu[flat]], idx_a[ju[flat]]], axis=1)
    total = idx_a.size * idx_b.size
    if total == 0:
        return np.empty((0, 2), dtype=np.int64)
    flat = rng.choice(total, size=rng.binomial(total, p), replace=False)
    return np.stack([idx_a[flat // idx_b.size], idx_b[flat % idx_b.size]], axis=1)


def pair_probability(spec: SbmSpec, s_i, s_j, y_i, y_j):
    P = spec.group_matrix()
    base = P[s_i, s_j]
    return np.minimum(1.0, base * np.where(np.asarray(y_i) == np.asarray(y_j), spec.label_affinity, 1.0))


def generate(spec: SbmSpec) -> tuple[AttributedGraph, DataSplit]:
    rng = np.random.default_rng(spec.seed)
    s = np.repeat(np.arange(spec.zeta), spec.group_sizes)
    y = (rng.random(spec.n) < np.asarray(spec.label_rates)[s]).astype(np.int64)
    mu = feature_means(spec, rng)
    x = mu[y, s] + rng.uniform(-spec.noise, spec.noise, size=(spec.n, spec.d))

    # blocks over (group, label) so that label affinity stays exact
    blocks = [(a, c, np.flatnonzero((s == a) & (y == c))) for a in range(spec.zeta) for c in range(2)]
    edges = []
    for bi, (a, c, ia) in enumerate(blocks):
        for bj in range(bi, len(blocks)):
            b, e, ib = blocks[bj]
            p = float(pair_probability(spec, a, b, c, e))
            edges.append(_block_pairs(rng, ia, None if bi == bj else ib, p))
    E = np.concatenate(edges) if edges else np.empty((0, 2), dtype=np.int64)
    E = E[np.lexsort((E[:, 1], E[:, 0]))] if E.size else E

    labeled = rng.random(spec.n) < spec.labeled_fraction
    labels = np.where(labeled, y, UNLABELED)
    g = AttributedGraph(x, s, labels, E, zeta=spec.zeta, name=spec.name)
    split = draw_split(g, spec.n_train, spec.val_fraction, spec.test_fraction, seed=spec.seed)
    return g, split


def expected_intra_ratio(spec: SbmSpec, g: AttributedGraph, y_true: np.ndarray | None = None) -> float:
    """Analytic expectation of the intra-group edge ratio given realized group/label counts.

    With ``label_affinity == 1`` labels do not matter and ``y_true`` may be omitted.
    """
    P = spec.group_matrix()
    s = g.sensitive
    if y_true is None:
        if spec.label_affinity != 1.0:
            raise ValueError("label-dependent spec needs the true labels")
        y_true = np.zeros(g.n, dtype=np.int64)
    intra = inter = 0.0
    cells = [(a, c, int(np.sum((s == a) & (y_true == c)))) for a in range(g.zeta) for c in range(2)]
    for i, (a, c, na) in enumerate(cells):
        for j in range(i, len(cells)):
            b, e, nb = cells[j]
            pairs = na * (na - 1) / 2 if i == j else na * nb
            p = min(1.0, P[a, b] * (spec.label_affinity if c == e else 1.0))
            if a == b:
                intra += pairs * p
            else:
                inter += pairs * p
    return intra / (intra + inter)


__all__ = ["SbmSpec", "generate", "feature_means", "pair_probability", "expected_intra_ratio"]
