"""Experiment sweeps: methods x hyperparameter grid x seeds, aggregation and selection.

A suite file is JSON::

    {"data": {"spec": {...}} | {"dir": "path/to/graph"},
     "split": {"n_train": 300, "val_fraction": 0.25, "test_fraction": 0.25},
     "base": {...TrainConfig overrides shared by every run...},
     "methods": ["FS", "FS_ns"] | {"name": {...overrides...}},
     "grid": {"alpha": [0.5, 1.0]},
     "seeds": [0, 1, 2, 3, 4],
     "threshold": 0.95}

Each seed fixes both the data split and the run seed, so methods are compared
on paired splits.
"""
from __future__ import annotations

import csv
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datagen import SbmSpec, generate
from .graph import AttributedGraph, draw_split, load_graph_dir
from .metrics import pareto_frontier, select_hyperparameters
from .trainer import TrainConfig, prepare_graph, train

log = logging.getLogger(__name__)

# named method presets (TrainConfig overrides)
METHODS: dict[str, dict] = {
    "FS": {},
    "FS_ne": {"disable_injector": True},
    "FS_ns": {"uniform_sampling": True},
    "FS_nr": {"disable_regularizer": True},
    "GSR": {"sampler": "uniform", "disable_injector": True},
    "SGSR": {"sampler": "stratified", "disable_injector": True},
    # similarity-only learned sampler: attention frozen at (1, 0)
    "PASSR": {"disable_injector": True, "attention": [1.0, 0.0], "learn_attention": False},
    # plain sampled GCN: uniform sampler, no injector, no regularizer
    "base": {"sampler": "uniform", "disable_injector": True, "alpha": 0.0},
}

# config fields that change the injected graph
_PREP_KEYS = ("disable_injector", "m", "h", "tau", "injection_mode", "hidden", "lr",
              "predictor_epochs", "patience")

RUN_FIELDS = ["method", "cell", "seed", "status", "val_accuracy", "val_dp", "test_accuracy",
              "test_dp", "best_epoch", "epochs", "edges_added", "wall_time", "error"]
METRICS = ("val_accuracy", "val_dp", "test_accuracy", "test_dp")


@dataclass
class SuiteConfig:
    methods: dict[str, dict]
    grid: dict[str, list] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0])
    base: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    threshold: float = 0.95

    @classmethod
    def from_dict(cls, d: dict) -> "SuiteConfig":
        d = dict(d)
        known = {"methods", "grid", "seeds", "base", "data", "split", "threshold"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown suite keys: {sorted(unknown)}")
        methods = d.get("methods", ["FS"])
        if isinstance(methods, list):
            missing = [m for m in methods if m not in METHODS]
            if missing:
                raise ValueError(f"unknown method presets: {missing}")
            methods = {m: METHODS[m] for m in methods}
        d["methods"] = methods
        cfg = cls(**d)
        if not cfg.methods or not cfg.seeds:
            raise ValueError("suite needs at least one method and one seed")
        # fail early on bad overrides
        for cell in cfg.cells():
            TrainConfig.from_dict({**cfg.base, **cell[2]})
        return cfg

    @classmethod
    def from_json(cls, path) -> "SuiteConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def method_grid(self, overrides: dict) -> dict[str, list]:
        """The shared grid minus keys the method pins (alpha is moot without the regularizer)."""
        grid = {k: v for k, v in self.grid.items() if k not in overrides}
        if {**self.base, **overrides}.get("disable_regularizer"):
            grid.pop("alpha", None)
        return grid

    def cells(self) -> list[tuple[str, str, dict]]:
        """``(method, cell_id, overrides)`` for every grid cell."""
        out = []
        for name, overrides in self.methods.items():
            grid = self.method_grid(overrides)
            keys = sorted(grid)
            for values in itertools.product(*(grid[k] for k in keys)):
                point = dict(zip(keys, values))
                cid = name + ("[" + ",".join(f"{k}={v}" for k, v in point.items()) + "]" if point else "")
                out.append((name, cid, {**overrides, **point}))
        return out


def load_suite_graph(data: dict) -> AttributedGraph:
    if "dir" in data:
        return load_graph_dir(data["dir"])
    return generate(SbmSpec.from_dict(data.get("spec", {})))[0]


def run_suite(cfg: SuiteConfig, g: AttributedGraph | None = None, progress=None) -> list[dict]:
    """Train every (cell, seed); failures are recorded and the sweep continues."""
    g = load_suite_graph(cfg.data) if g is None else g
    split_kw = {"n_train": 300, "val_fraction": 0.25, "test_fraction": 0.25, **cfg.split}
    splits = {s: draw_split(g, seed=s, **split_kw) for s in cfg.seeds}
    prepared: dict[tuple, tuple] = {}
    rows = []
    for method, cid, overrides in cfg.cells():
        for seed in cfg.seeds:
            row = {"method": method, "cell": cid, "seed": seed, "status": "ok", "error": ""}
            t0 = time.perf_counter()
            try:
                config = TrainConfig.from_dict({**cfg.base, **overrides, "seed": seed})
                key = (seed,) + tuple(repr(getattr(config, k)) for k in _PREP_KEYS)
                if key not in prepared:
                    prepared[key] = prepare_graph(g, splits[seed], config)[:2]
                g2, summary = prepared[key]
                _, _, rep = train(g2, splits[seed], config, injection=summary)
                row.update({k: getattr(rep, k) for k in METRICS}, best_epoch=rep.best_epoch,
                           epochs=len(rep.epochs), edges_added=summary["edges_added"])
            except Exception as exc:  # noqa: BLE001 - one bad cell must not sink the sweep
                log.warning("run %s seed %s failed: %s", cid, seed, exc)
                row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            row["wall_time"] = time.perf_counter() - t0
            rows.append(row)
            if progress:
                progress(row)
    return rows


def aggregate(rows: list[dict]) -> list[dict]:
    """Mean and (population) std of every metric per cell over successful runs."""
    cells: dict[str, list[dict]] = {}
    meta: dict[str, str] = {}
    for r in rows:
        cells.setdefault(r["cell"], [])
        meta[r["cell"]] = r["method"]
        if r["status"] == "ok":
            cells[r["cell"]].append(r)
    out = []
    for cid, ok in cells.items():
        rec = {"method": meta[cid], "cell": cid, "runs": len(ok)}
        for m in METRICS:
            vals = np.array([float(r[m]) for r in ok])
            rec[m + "_mean"] = float(vals.mean()) if vals.size else float("nan")
            rec[m + "_std"] = float(vals.std()) if vals.size else float("nan")
        out.append(rec)
    return out


def final_table(cells: list[dict], threshold: float = 0.95) -> list[dict]:
    """Two-step selection per method; one row per method."""
    table = []
    for method in dict.fromkeys(c["method"] for c in cells):
        mine = [c for c in cells if c["method"] == method and c["runs"] > 0]
        if not mine:
            table.append({"method": method, "cell": "", "runs": 0})
            continue
        chosen = select_hyperparameters(
            [(c["cell"], c["val_accuracy_mean"], c["val_dp_mean"]) for c in mine],
            threshold=threshold)
        table.append(next(c for c in mine if c["cell"] == chosen))
    return table


def pareto_rows(cells: list[dict]) -> list[dict]:
    """Every cell's mean test point, flagged by method-level and global frontier membership."""
    live = [c for c in cells if c["runs"] > 0]
    if not live:
        return []
    pts = [(c["test_accuracy_mean"], c["test_dp_mean"]) for c in live]
    global_front = set(pareto_frontier(pts))
    out = []
    for method in dict.fromkeys(c["method"] for c in live):
        idx = [i for i, c in enumerate(live) if c["method"] == method]
        local = {idx[j] for j in pareto_frontier([pts[i] for i in idx])}
        for i in idx:
            out.append({"method": method, "cell": live[i]["cell"], "test_accuracy": pts[i][0],
                        "test_dp": pts[i][1], "method_frontier": i in local,
                        "global_frontier": i in global_front})
    return out


def _write_csv(path: Path, rows: list[dict], fields: list[str] | None = None) -> None:
    fields = fields or (list(rows[0]) if rows else [])
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def read_runs(path) -> list[dict]:
    """Per-run CSV back into typed rows."""
    rows = []
    with Path(path).open(newline="", encoding="utf-8") as f:
        for r in csv.DictReader(f):
            r["seed"] = int(r["seed"])
            for m in METRICS:
                r[m] = float(r[m]) if r[m] != "" else float("nan")
            rows.append(r)
    return rows


def write_report(out_dir, rows: list[dict], threshold: float = 0.95) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = aggregate(rows)
    paths = {"runs": out / "runs.csv", "cells": out / "cells.csv",
             "table": out / "table.csv", "pareto": out / "pareto.csv"}
    _write_csv(paths["runs"], rows, RUN_FIELDS)
    _write_csv(paths["cells"], cells)
    _write_csv(paths["table"], final_table(cells, threshold), list(cells[0]) if cells else None)
    _write_csv(paths["pareto"], pareto_rows(cells),
               ["method", "cell", "test_accuracy", "test_dp", "method_frontier", "global_frontier"])
    return paths


__all__ = ["METHODS", "SuiteConfig", "run_suite", "aggregate", "final_table", "pareto_rows",
           "read_runs", "write_report", "load_suite_graph"]
