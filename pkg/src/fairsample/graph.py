"""Attributed graph store with sensitive groups and partial binary labels.

Nodes are dense 0-based integers in feature-file order.  Edges are undirected,
stored once in insertion order and mirrored in a CSR adjacency whose neighbor
lists are sorted.  Unlabeled nodes carry label ``-1``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

UNLABELED = -1


class GraphFormatError(ValueError):
    """Raised when graph files or arrays violate the storage invariants."""


class AttributedGraph:
    """Immutable undirected graph with node features, sensitive values and labels.

    Parameters
    ----------
    features : array (n, d)
        Finite real node features.
    sensitive : array (n,)
        Group index in ``[0, zeta)`` for every node.
    labels : array (n,)
        Binary label or ``-1`` for unlabeled nodes.
    edges : array (m, 2)
        Undirected edges, each listed once.
    zeta : int, optional
        Size of the sensitive domain; defaults to ``max(sensitive) + 1`` (at least 2).
    ids : sequence of str, optional
        External node identifiers used for serialization.
    """

    def __init__(
        self,
        features,
        sensitive,
        labels,
        edges,
        zeta: int | None = None,
        ids: Sequence[str] | None = None,
        name: str | None = None,
    ):
        x = np.array(features, dtype=np.float64)
        if x.ndim != 2:
            raise GraphFormatError("features must be a 2-d array")
        n = x.shape[0]
        if not np.all(np.isfinite(x)):
            raise GraphFormatError("non-finite feature value")
        s = np.array(sensitive, dtype=np.int64).reshape(-1)
        y = np.array(labels, dtype=np.int64).reshape(-1)
        if s.shape[0] != n or y.shape[0] != n:
            raise GraphFormatError("sensitive/labels length differs from node count")
        if n and s.min() < 0:
            raise GraphFormatError("negative sensitive value")
        if np.any((y != UNLABELED) & (y != 0) & (y != 1)):
            raise GraphFormatError("labels must be 0, 1 or unlabeled")
        if zeta is None:
            zeta = max(2, int(s.max()) + 1 if n else 2)
        if zeta < 2:
            raise GraphFormatError("sensitive domain needs at least two values")
        if n and s.max() >= zeta:
            raise GraphFormatError(f"sensitive value {int(s.max())} outside domain of size {zeta}")

        e = np.array(edges, dtype=np.int64).reshape(-1, 2)
        if e.size:
            if e.min() < 0 or e.max() >= n:
                raise GraphFormatError("edge references unknown node")
            if np.any(e[:, 0] == e[:, 1]):
                bad = e[e[:, 0] == e[:, 1]][0]
                raise GraphFormatError(f"self-loop rejected: ({bad[0]}, {bad[1]})")
            key = np.sort(e, axis=1)
            uniq = np.unique(key[:, 0] * n + key[:, 1])
            if uniq.size != e.shape[0]:
                raise GraphFormatError("duplicate edge rejected")

        self.n = n
        self.d = x.shape[1]
        self.zeta = int(zeta)
        self.features = x
        self.sensitive = s
        self.labels = y
        self.edges = e
        self.ids = [str(i) for i in range(n)] if ids is None else [str(i) for i in ids]
        if len(self.ids) != n:
            raise GraphFormatError("ids length differs from node count")
        self.name = name

        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        order = np.lexsort((dst, src))
        src, dst = src[order], dst[order]
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, src + 1, 1)
        np.cumsum(self.indptr, out=self.indptr)
        self.indices = dst
        self.degree = np.diff(self.indptr)
        # |Gamma_v ∩ V_a| for every node and group
        self.group_counts = np.zeros((n, self.zeta), dtype=np.int64)
        np.add.at(self.group_counts, (src, s[dst]), 1)
        self.groups = [np.flatnonzero(s == a) for a in range(self.zeta)]

        for arr in (self.features, self.sensitive, self.labels, self.edges,
                    self.indptr, self.indices, self.degree, self.group_counts):
            arr.flags.writeable = False

    def __repr__(self):
        return (f"AttributedGraph(n={self.n}, m={self.num_edges}, d={self.d}, "
                f"zeta={self.zeta}, labeled={int(self.labeled_mask.sum())})")

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def labeled_mask(self) -> np.ndarray:
        return self.labels != UNLABELED

    def neighbors(self, v: int) -> np.ndarray:
        if not 0 <= v < self.n:
            raise KeyError(f"unknown node id {v}")
        return self.indices[self.indptr[v]:self.indptr[v + 1]]

    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.indices.shape[0])
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def mean_aggregation_matrix(self) -> sp.csr_matrix:
        """Row-stochastic ``(D + I)^{-1} (A + I)``: mean over the closed neighborhood."""
        a = self.adjacency() + sp.identity(self.n, format="csr")
        inv = sp.diags(1.0 / (self.degree + 1.0))
        return (inv @ a).tocsr()

    def with_edges(self, extra_edges, name: str | None = None) -> "AttributedGraph":
        """Return a new graph with ``extra_edges`` appended to the edge list."""
        extra = np.asarray(extra_edges, dtype=np.int64).reshape(-1, 2)
        return AttributedGraph(
            self.features, self.sensitive, self.labels,
            np.concatenate([self.edges, extra]), zeta=self.zeta, ids=self.ids,
            name=name if name is not None else self.name,
        )

    def with_labels(self, labels) -> "AttributedGraph":
        return AttributedGraph(self.features, self.sensitive, labels, self.edges,
                               zeta=self.zeta, ids=self.ids, name=self.name)


@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise ValueError("train/val/test sets overlap")

    def validate(self, g: AttributedGraph) -> None:
        for name in ("train", "val", "test"):
            ids = getattr(self, name)
            if ids.size and (ids.min() < 0 or ids.max() >= g.n):
                raise ValueError(f"{name} split references unknown node")
            if not np.all(g.labeled_mask[ids]):
                raise ValueError(f"{name} split contains unlabeled nodes")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train.tolist(),
                "val": self.val.tolist(), "test": self.test.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DataSplit":
        return cls(d["train"], d["val"], d["test"], d.get("seed"))


def draw_split(g: AttributedGraph, n_train: int, val_fraction: float = 0.25,
               test_fraction: float = 0.25, seed: int = 0) -> DataSplit:
    """Sample disjoint train/val/test sets from the labeled nodes.

    ``n_train`` nodes go to training; validation and test each receive the given
    fraction of the labeled set.
    """
    labeled = np.flatnonzero(g.labeled_mask)
    n_val = int(round(val_fraction * labeled.size))
    n_test = int(round(test_fraction * labeled.size))
    if n_train < 1 or n_train + n_val + n_test > labeled.size:
        raise ValueError(f"infeasible split: {n_train}+{n_val}+{n_test} > {labeled.size} labeled nodes")
    perm = np.random.default_rng(seed).permutation(labeled)
    return DataSplit(np.sort(perm[:n_train]),
                     np.sort(perm[n_train:n_train + n_val]),
                     np.sort(perm[n_train + n_val:n_train + n_val + n_test]),
                     seed)


def intra_group_edge_ratio(g: AttributedGraph) -> float:
    if g.num_edges == 0:
        raise ValueError("intra-group edge ratio undefined for an empty edge set")
    s = g.sensitive
    return float(np.mean(s[g.edges[:, 0]] == s[g.edges[:, 1]]))


def homophily_mode(g: AttributedGraph) -> str:
    """``"homophilic"`` when at least half of the edges are intra-group."""
    return "homophilic" if intra_group_edge_ratio(g) >= 0.5 else "heterophilic"


def hop_distances(g: AttributedGraph, v: int, h: int) -> dict[int, int]:
    """Breadth-first distances from ``v`` to every node within ``h`` hops (``v`` excluded)."""
    if h < 1:
        raise ValueError("hop count must be >= 1")
    if not 0 <= v < g.n:
        raise KeyError(f"unknown node id {v}")
    seen = np.zeros(g.n, dtype=bool)
    seen[v] = True
    frontier = np.array([v])
    out: dict[int, int] = {}
    for dist in range(1, h + 1):
        if frontier.size == 0:
            break
        nxt = np.unique(np.concatenate([g.neighbors(int(u)) for u in frontier]))
        nxt = nxt[~seen[nxt]]
        seen[nxt] = True
        out.update((int(u), dist) for u in nxt)
        frontier = nxt
    return out


def k_hop_neighbors(g: AttributedGraph, v: int, h: int) -> set[int]:
    return set(hop_distances(g, v, h))


# ---------------------------------------------------------------------------
# file formats

def _fmt(x: float) -> str:
    return repr(float(x))


def save_graph(g: AttributedGraph, directory) -> dict[str, Path]:
    """Write ``edges.tsv``, ``features.csv`` and ``meta.json`` into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"edges": out / "edges.tsv", "features": out / "features.csv", "meta": out / "meta.json"}
    with paths["edges"].open("w", encoding="utf-8", newline="\n") as f:
        f.write("# u\tv\n")
        for u, v in g.edges:
            f.write(f"{g.ids[u]}\t{g.ids[v]}\n")
    with paths["features"].open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "s", "y"] + [f"f{j}" for j in range(g.d)])
        for i in range(g.n):
            y = "" if g.labels[i] == UNLABELED else str(int(g.labels[i]))
            w.writerow([g.ids[i], int(g.sensitive[i]), y] + [_fmt(t) for t in g.features[i]])
    meta = {"sensitive_domain_size": g.zeta, "feature_dim": g.d}
    if g.name is not None:
        meta["name"] = g.name
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_graph(edge_path, feature_path, meta_path) -> AttributedGraph:
    meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    try:
        zeta = int(meta["sensitive_domain_size"])
        d = int(meta["feature_dim"])
    except KeyError as exc:
        raise GraphFormatError(f"{meta_path}: missing meta key {exc}") from None

    ids: list[str] = []
    sens: list[int] = []
    labels: list[int] = []
    rows: list[list[float]] = []
    with open(feature_path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = ["id", "s", "y"] + [f"f{j}" for j in range(d)]
        if header != expected:
            raise GraphFormatError(f"{feature_path}:1: header must be {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 3:
                raise GraphFormatError(f"{feature_path}:{lineno}: expected {d + 3} fields, got {len(row)}")
            if row[1] == "":
                raise GraphFormatError(f"{feature_path}:{lineno}: node {row[0]!r} missing sensitive value")
            try:
                s = int(row[1])
                y = UNLABELED if row[2] == "" else int(row[2])
                vals = [float(t) for t in row[3:]]
            except ValueError:
                raise GraphFormatError(f"{feature_path}:{lineno}: malformed value") from None
            if not all(math.isfinite(t) for t in vals):
                raise GraphFormatError(f"{feature_path}:{lineno}: non-finite feature")
            if s < 0 or s >= zeta:
                raise GraphFormatError(f"{feature_path}:{lineno}: sensitive value {s} outside domain")
            if y not in (0, 1, UNLABELED):
                raise GraphFormatError(f"{feature_path}:{lineno}: label must be 0, 1 or empty")
            ids.append(row[0])
            sens.append(s)
            labels.append(y)
            rows.append(vals)
    index = {name: i for i, name in enumerate(ids)}
    if len(index) != len(ids):
        raise GraphFormatError(f"{feature_path}: duplicate node id")

    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    with open(edge_path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(f"{edge_path}:{lineno}: expected 'u<TAB>v'")
            a, b = parts[0].strip(), parts[1].strip()
            if a not in index or b not in index:
                raise GraphFormatError(f"{edge_path}:{lineno}: edge references unknown node")
            u, v = index[a], index[b]
            if u == v:
                raise GraphFormatError(f"{edge_path}:{lineno}: self-loop rejected")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise GraphFormatError(f"{edge_path}:{lineno}: duplicate edge rejected")
            seen.add(key)
            edges.append((u, v))

    x = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    return AttributedGraph(x, sens, labels, np.array(edges, dtype=np.int64).reshape(-1, 2),
                           zeta=zeta, ids=ids, name=meta.get("name"))


def load_graph_dir(directory) -> AttributedGraph:
    p = Path(directory)
    return load_graph(p / "edges.tsv", p / "features.csv", p / "meta.json")


def save_split(split: DataSplit, path) -> None:
    Path(path).write_text(json.dumps(split.to_dict()) + "\n", encoding="utf-8")


def load_split(path) -> DataSplit:
    return DataSplit.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def group_sizes(g: AttributedGraph, nodes: Iterable[int] | None = None) -> np.ndarray:
    s = g.sensitive if nodes is None else g.sensitive[np.asarray(list(nodes), dtype=np.int64)]
    return np.bincount(s, minlength=g.zeta)


__all__ = [
    "UNLABELED", "GraphFormatError", "AttributedGraph", "DataSplit", "draw_split",
    "intra_group_edge_ratio", "homophily_mode", "hop_distances", "k_hop_neighbors",
    "save_graph", "load_graph", "load_graph_dir", "save_split", "load_split", "group_sizes",
]
