"""Command line entry point: ``fairsample <command> ...``.

Data directories hold ``edges.tsv``, ``features.csv``, ``meta.json`` and an
optional ``split.json``.  ``FAIRSAMPLE_SEED`` overrides the seed of ``synth``,
``inject-edges`` and ``train``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .datagen import SbmSpec, generate
from .graph import (AttributedGraph, DataSplit, GraphFormatError, draw_split, intra_group_edge_ratio,
                    load_graph_dir, load_split, save_graph, save_split)
from .injector import MODES, inject
from .metrics import evaluate
from .sampler import VARIANTS
from .theory import balancedness, verify_bound
from .trainer import TrainConfig, TrainingDiverged, load_run_params, run_experiment, save_run, train_predictor

SEED_ENV = "FAIRSAMPLE_SEED"


class CliError(Exception):
    pass


def _env_seed(default: int | None) -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _load_data(directory, seed: int = 0, n_train: int = 300) -> tuple[AttributedGraph, DataSplit]:
    d = Path(directory)
    if not d.is_dir():
        raise CliError(f"{d}: not a data directory")
    g = load_graph_dir(d)
    split_path = d / "split.json"
    split = load_split(split_path) if split_path.exists() else draw_split(g, n_train, seed=seed)
    split.validate(g)
    return g, split


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    spec = SbmSpec.from_dict(_read_json(args.spec)) if args.spec else SbmSpec()
    seed = _env_seed(None)
    if seed is not None:
        spec.seed = seed
    g, split = generate(spec)
    out = Path(args.out)
    save_graph(g, out)
    save_split(split, out / "split.json")
    _write_json(out / "spec.json", spec.to_dict())
    print(f"wrote {g.n} nodes, {g.num_edges} edges to {out} "
          f"(intra ratio {intra_group_edge_ratio(g):.3f})")
    return 0


def cmd_inject(args) -> int:
    seed = _env_seed(args.seed)
    g, split = _load_data(args.data, seed)
    known = np.full(g.n, -1, dtype=np.int64)
    known[split.train] = g.labels[split.train]
    predictor = None
    if not args.no_pseudo_labels:
        predictor = train_predictor(g, split, seed=seed)
    g2, rep = inject(g, args.m, args.h, args.tau, predictor, args.mode,
                     rng=np.random.default_rng(seed), known=known, seed=seed)
    out = Path(args.out)
    save_graph(g2, out)
    save_split(split, out / "split.json")
    report = rep.to_dict()
    report.update(intra_ratio_before=intra_group_edge_ratio(g), intra_ratio_after=intra_group_edge_ratio(g2),
                  balance_gap_before=balancedness(g)[1], balance_gap_after=balancedness(g2)[1])
    _write_json(out / "injection.json", report)
    print(f"added {len(rep.edges)} edges ({rep.mode}); intra ratio "
          f"{report['intra_ratio_before']:.3f} -> {report['intra_ratio_after']:.3f}")
    return 0


def build_config(path, overrides, sampler: str | None = None) -> TrainConfig:
    raw = _read_json(path) if path else {}
    for item in overrides or []:
        if "=" not in item:
            raise CliError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        raw[k.strip()] = _parse_value(v)
    if sampler:
        raw["sampler"] = sampler
    seed = _env_seed(None)
    if seed is not None:
        raw["seed"] = seed
    return TrainConfig.from_dict(raw)


def cmd_train(args) -> int:
    config = build_config(args.config, args.override, args.sampler)
    g, split = _load_data(args.data, config.seed)
    params, policy, report, g2 = run_experiment(g, split, config)
    out = Path(args.out)
    save_run(out, params, policy, report)
    _write_json(out / "config.json", config.to_dict())
    save_graph(g2, out / "graph")
    save_split(split, out / "graph" / "split.json")
    print(json.dumps({"test_accuracy": report.test_accuracy, "test_dp": report.test_dp,
                      "best_epoch": report.best_epoch, "epochs": len(report.epochs)}))
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    params, policy = load_run_params(run / "checkpoint.json")
    g, split = _load_data(args.data or run / "graph")
    nodes = {"train": split.train, "val": split.val, "test": split.test,
             "all": np.arange(g.n)}[args.nodes]
    res = evaluate(g, params, nodes, args.mode, policy=policy, k=args.k, seed=args.seed)
    print(json.dumps(res.to_dict()))
    return 0


def cmd_verify_bound(args) -> int:
    rows = verify_bound(args.trials, args.seed)
    fields = ["trial", "n", "d", "K", "edges", "l_dp", "bound", "slack", "ok"]
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            out.close()
    bad = [r["trial"] for r in rows if not r["ok"]]
    print(f"{len(rows) - len(bad)}/{len(rows)} instances satisfy the bound", file=sys.stderr)
    if bad:
        raise CliError(f"bound violated on trials {bad}")
    return 0


def cmd_suite(args) -> int:
    from .suite import SuiteConfig, run_suite, write_report

    cfg = SuiteConfig.from_json(args.grid)

    def progress(row):
        if not args.quiet:
            msg = (f"{row['cell']} seed={row['seed']} acc={row['test_accuracy']:.3f} dp={row['test_dp']:.3f}"
                   if row["status"] == "ok" else f"{row['cell']} seed={row['seed']} FAILED {row['error']}")
            print(msg, file=sys.stderr, flush=True)

    rows = run_suite(cfg, progress=progress)
    paths = write_report(args.out, rows, cfg.threshold)
    _write_json(Path(args.out) / "suite.json", _read_json(args.grid))
    failed = sum(r["status"] != "ok" for r in rows)
    print(f"{len(rows)} runs ({failed} failed); table at {paths['table']}")
    return 0


def cmd_report(args) -> int:
    from .suite import aggregate, final_table, read_runs, write_report

    runs = Path(args.suite) / "runs.csv"
    if not runs.exists():
        raise CliError(f"{runs}: no such file (run `fairsample suite` first)")
    rows = read_runs(runs)
    if args.out:
        table = final_table(aggregate(rows), args.threshold)
        fields = list(table[0]) if table else []
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            w = csv.DictWriter(f, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
            w.writeheader()
            w.writerows(table)
    else:
        write_report(args.suite, rows, args.threshold)
    for r in final_table(aggregate(rows), args.threshold):
        if r.get("runs"):
            print(f"{r['method']:8s} {r['cell']:30s} acc {r['test_accuracy_mean']:.3f}"
                  f" +- {r['test_accuracy_std']:.3f}  dp {r['test_dp_mean']:.3f} +- {r['test_dp_std']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairsample", description="Fair GCN training with learned neighbor sampling.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic biased graph")
    s.add_argument("--spec", help="SbmSpec JSON (defaults if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inject-edges", help="add same-label edges across (or within) groups")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--m", type=int, default=10)
    s.add_argument("--h", type=int, default=2)
    s.add_argument("--tau", type=float, default=0.8)
    s.add_argument("--mode", choices=MODES, default="auto")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-pseudo-labels", action="store_true", help="use training labels only")
    s.set_defaults(func=cmd_inject)

    s = sub.add_parser("train", help="train a classifier and sampler")
    s.add_argument("--config", help="TrainConfig JSON")
    s.add_argument("--override", action="append", metavar="KEY=VALUE")
    s.add_argument("--sampler", choices=VARIANTS)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a trained run")
    s.add_argument("--run", required=True)
    s.add_argument("--data", help="data directory (defaults to the run's graph)")
    s.add_argument("--nodes", choices=["train", "val", "test", "all"], default="test")
    s.add_argument("--mode", choices=["full", "sampled"], default="full")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("verify-bound", help="check the SGCN fairness bound on random instances")
    s.add_argument("--trials", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="CSV path (stdout if omitted)")
    s.set_defaults(func=cmd_verify_bound)

    s = sub.add_parser("suite", help="run a method x grid x seed sweep")
    s.add_argument("--grid", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("-q", "--quiet", action="store_true")
    s.set_defaults(func=cmd_suite)

    s = sub.add_parser("report", help="rebuild tables from a suite's per-run CSV")
    s.add_argument("--suite", required=True, help="suite output directory")
    s.add_argument("--out", help="write only the final table here")
    s.add_argument("--threshold", type=float, default=0.95)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CliError, GraphFormatError, ValueError, KeyError, TrainingDiverged) as exc:
        print(f"fairsample: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
