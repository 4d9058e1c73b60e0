"""Mini-batch training of a fair GCN jointly with its computation-graph sampler.

Per batch the classifier minimizes ``CE + alpha * L_dp`` by backpropagation and
the sampler follows the log-derivative surrogate built from ``dL/dh1``.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compgraph import Batch, build_sampled, cumulative_keys
from .gcn import GcnParams, forward, forward_full, full_probabilities, predict, save_checkpoint
from .graph import UNLABELED, AttributedGraph, DataSplit, intra_group_edge_ratio
from .injector import inject
from .metrics import evaluate
from .sampler import SamplerPolicy, policy_gradient_step
from .tensor import Tape, Tensor
from .theory import balancedness

log = logging.getLogger(__name__)

# RNG stream tags: every random draw is keyed by (seed, tag, ...)
_INIT, _SHUFFLE, _TREE, _INJECT, _PREDICTOR, _EVAL = 1, 2, 3, 4, 5, 6


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    alpha: float = 1.0
    K: int = 2
    fanout: int = 10
    lr: float = 0.01
    batch_size: int = 64
    max_epochs: int = 300
    patience: int = 20
    seed: int = 0
    hidden: int = 64
    # edge injector
    m: int = 10
    h: int = 2
    tau: float = 0.8
    injection_mode: str = "auto"
    # sampler
    sampler: str = "fairsample"
    d_s: int = 16
    attention: tuple[float, float] = (1.0, 1.0)
    learn_attention: bool = True
    ws_scale: float = 0.1
    # ablations
    disable_injector: bool = False
    disable_regularizer: bool = False
    uniform_sampling: bool = False
    # pseudo-label predictor
    predictor_epochs: int = 200

    def __post_init__(self):
        self.attention = tuple(float(t) for t in self.attention)
        checks = {
            "alpha": self.alpha >= 0, "K": self.K >= 0, "fanout": self.fanout >= 1,
            "lr": self.lr > 0, "batch_size": self.batch_size >= 1,
            "max_epochs": self.max_epochs >= 1, "patience": self.patience >= 1,
            "hidden": self.hidden >= 1, "m": self.m >= 0, "h": self.h >= 1,
            "tau": 0.5 < self.tau < 1.0, "d_s": self.d_s >= 1,
            "attention": len(self.attention) == 2,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid config values: {', '.join(bad)}")
        if self.sampler not in ("fairsample", "uniform", "stratified"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    @property
    def effective_alpha(self) -> float:
        return 0.0 if self.disable_regularizer else self.alpha

    @property
    def effective_sampler(self) -> str:
        return "uniform" if self.uniform_sampling else self.sampler

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["attention"] = list(self.attention)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class RunReport:
    config: dict
    seed: int
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    val_accuracy: float = float("nan")
    val_dp: float = float("nan")
    test_accuracy: float = float("nan")
    test_dp: float = float("nan")
    test_group_rates: list = field(default_factory=list)
    injection: dict = field(default_factory=dict)
    wall_time: float = 0.0
    stopped_early: bool = False

    def metrics(self) -> dict:
        """Everything except wall time, for reproducibility comparisons."""
        d = dataclasses.asdict(self)
        d.pop("wall_time")
        return d

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Adam:
    def __init__(self, lr: float = 0.01, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """In-place update of every array in ``params`` that has a gradient."""
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            g = g.reshape(p.shape)
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def dp_regularizer(tape: Tape, pos_prob: Tensor, groups, zeta: int) -> Tensor:
    """Sum over groups of |mean positive probability inside - outside| on the tape."""
    groups = np.asarray(groups, dtype=np.int64)
    if np.unique(groups).size < 2:
        log.warning("batch holds a single sensitive group; fairness term is 0")
    return tape.abs_mean_diff(pos_prob, groups, zeta)


def _loss_terms(tape: Tape, logits: Tensor, probs: Tensor, y, s, zeta: int, alpha: float):
    ce = tape.softmax_ce(logits, y)
    if alpha == 0.0:
        return ce, ce
    ldp = dp_regularizer(tape, tape.column(probs, 1), s, zeta)
    return tape.add(ce, tape.scale(ldp, alpha)), ce


def _numpy_loss(probs: np.ndarray, y, s, zeta: int, alpha: float) -> float:
    ce = float(-np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))))
    if alpha == 0.0:
        return ce
    p = probs[:, 1]
    ldp = 0.0
    for a in range(zeta):
        inside = s == a
        if inside.any() and (~inside).any():
            ldp += abs(p[inside].mean() - p[~inside].mean())
    return ce + alpha * ldp


def sample_batch(g: AttributedGraph, roots, K: int, k: int, probs: np.ndarray, seed: int,
                 epoch: int, stream: int = _TREE) -> Batch:
    keys = cumulative_keys(g, probs)
    trees = [build_sampled(g, int(r), K, k, probs,
                           np.random.default_rng([seed, stream, epoch, int(r)]), keys)
             for r in roots]
    return Batch(trees)


def sampled_probabilities(g: AttributedGraph, params: GcnParams, policy: SamplerPolicy,
                          nodes, k: int, seed: int = 0, chunk: int = 256) -> np.ndarray:
    probs = policy.edge_probabilities(g)
    out = []
    nodes = np.asarray(nodes, dtype=np.int64)
    for i in range(0, nodes.size, chunk):
        batch = sample_batch(g, nodes[i:i + chunk], params.K, k, probs, seed, 0, _EVAL)
        _, p, _ = forward(g, params, batch)
        out.append(p.value)
    return np.vstack(out)


def train_predictor(g: AttributedGraph, split: DataSplit, hidden: int = 64, K: int = 2,
                    lr: float = 0.01, max_epochs: int = 200, patience: int = 20,
                    seed: int = 0) -> GcnParams:
    """Full-batch 2-layer GCN on the training labels, early-stopped on validation CE."""
    rng = np.random.default_rng([seed, _PREDICTOR])
    params = GcnParams.init(g.d, hidden, K, rng)
    opt = Adam(lr)
    y_tr = g.labels[split.train]
    best, best_loss, wait = params.copy(), np.inf, 0
    for _ in range(max_epochs):
        tape = Tape()
        ws, head = params.register(tape)
        logits, _, _ = forward_full(g, params, tape, (ws, head))
        loss = tape.softmax_ce(tape.gather(logits, split.train), y_tr)
        grads = tape.backward(loss)
        opt.step(params.as_dict(), grads)
        if split.val.size:
            p = full_probabilities(g, params)[split.val]
            vl = _numpy_loss(p, g.labels[split.val], g.sensitive[split.val], g.zeta, 0.0)
        else:
            vl = float(loss.value[0, 0])
        if vl < best_loss - 1e-12:
            best, best_loss, wait = params.copy(), vl, 0
        else:
            wait += 1
            if wait >= patience:
                break
    return best


def train(g: AttributedGraph, split: DataSplit, config: TrainConfig,
          injection: dict | None = None):
    """Train classifier and sampler; returns ``(GcnParams, SamplerPolicy, RunReport)``.

    ``g`` is used as given (apply the injector beforehand).  Test metrics are
    computed once, on the checkpoint with the lowest validation loss.
    """
    t0 = time.perf_counter()
    split.validate(g)
    if split.train.size == 0:
        raise ValueError("empty training set")
    seed = config.seed
    alpha = config.effective_alpha
    rng = np.random.default_rng([seed, _INIT])
    params = GcnParams.init(g.d, config.hidden, config.K, rng)
    policy = SamplerPolicy.create(config.effective_sampler, g.d, rng, config.d_s,
                                  config.attention, config.learn_attention, config.ws_scale)
    opt = Adam(config.lr)
    popt = Adam(config.lr)
    report = RunReport(config=config.to_dict(), seed=seed, injection=injection or {})

    val = split.val
    y_val, s_val = g.labels[val], g.sensitive[val]
    best = (params.copy(), policy.copy())
    best_loss, wait = np.inf, 0
    for epoch in range(config.max_epochs):
        order = np.random.default_rng([seed, _SHUFFLE, epoch]).permutation(split.train)
        losses = []
        for b in range(0, order.size, config.batch_size):
            roots = order[b:b + config.batch_size]
            try:
                losses.append(_train_step(g, params, policy, roots, config, alpha, epoch, opt, popt))
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {b // config.batch_size}: {exc}") from exc
        train_loss = float(np.mean(losses))
        if not np.isfinite(train_loss):
            raise TrainingDiverged(f"epoch {epoch}: non-finite training loss")

        probs = full_probabilities(g, params)
        if val.size:
            pv = probs[val]
            val_loss = _numpy_loss(pv, y_val, s_val, g.zeta, alpha)
            ev = _metrics_from_probs(pv, y_val, s_val, g.zeta)
        else:
            val_loss, ev = train_loss, (float("nan"), float("nan"))
        report.epochs.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                              "val_accuracy": ev[0], "val_dp": ev[1]})
        if val_loss < best_loss - 1e-12:
            best_loss, wait = val_loss, 0
            best = (params.copy(), policy.copy())
            report.best_epoch = epoch
        else:
            wait += 1
            if wait >= config.patience:
                report.stopped_early = True
                break

    params, policy = best
    if report.best_epoch >= 0:
        rec = report.epochs[report.best_epoch]
        report.val_accuracy, report.val_dp = rec["val_accuracy"], rec["val_dp"]
    if split.test.size:
        res = evaluate(g, params, split.test)
        report.test_accuracy, report.test_dp = res.accuracy, res.delta_dp
        report.test_group_rates = res.group_rates
    report.wall_time = time.perf_counter() - t0
    return params, policy, report


def _metrics_from_probs(probs, y, s, zeta):
    pred = predict(probs)
    rates = [pred[s == a].mean() for a in range(zeta) if np.any(s == a)]
    return float(np.mean(pred == y)), float(max(rates) - min(rates))


def _train_step(g, params: GcnParams, policy: SamplerPolicy, roots, config: TrainConfig,
                alpha: float, epoch: int, opt: Adam, popt: Adam) -> float:
    edge_probs = policy.edge_probabilities(g)
    batch = sample_batch(g, roots, config.K, config.fanout, edge_probs, config.seed, epoch)
    tape = Tape()
    registered = params.register(tape)
    logits, probs, hs = forward(g, params, batch, tape, registered)
    loss, _ = _loss_terms(tape, logits, probs, g.labels[roots], g.sensitive[roots], g.zeta, alpha)
    value = float(loss.value[0, 0])
    W1 = params.weights[0].copy() if params.K else None
    grads = tape.backward(loss, wrt=hs[1:2])
    opt.step(params.as_dict(), grads)
    if policy.learnable and params.K:
        pg = policy_gradient_step(policy, g, batch, hs[1].grad, W1)
        popt.step({"Ws": policy.Ws, "a": policy.a.reshape(2, 1)}, pg)
    return value


def prepare_graph(g: AttributedGraph, split: DataSplit, config: TrainConfig):
    """Phase 1: train the pseudo-label predictor and inject edges (unless disabled).

    Only training labels count as known; validation and test labels stay hidden
    from the injector.
    """
    before = intra_group_edge_ratio(g) if g.num_edges else float("nan")
    summary = {"enabled": not config.disable_injector and config.m > 0,
               "intra_ratio_before": before, "intra_ratio_after": before,
               "balance_gap_before": balancedness(g)[1], "balance_gap_after": balancedness(g)[1],
               "edges_added": 0, "pseudo_labeled": 0}
    if not summary["enabled"]:
        return g, summary, None
    known = np.full(g.n, UNLABELED, dtype=np.int64)
    known[split.train] = g.labels[split.train]
    predictor = train_predictor(g, split, config.hidden, 2, config.lr,
                                config.predictor_epochs, config.patience, config.seed)
    g2, rep = inject(g, config.m, config.h, config.tau, predictor, config.injection_mode,
                     rng=np.random.default_rng([config.seed, _INJECT]), known=known,
                     seed=config.seed)
    summary.update(intra_ratio_after=intra_group_edge_ratio(g2) if g2.num_edges else before,
                   balance_gap_after=balancedness(g2)[1], edges_added=len(rep.edges),
                   pseudo_labeled=rep.pseudo_labeled, mode=rep.mode)
    return g2, summary, rep


def run_experiment(g: AttributedGraph, split: DataSplit, config: TrainConfig):
    """Full pipeline: optional edge injection, then joint training."""
    t0 = time.perf_counter()
    g2, summary, _ = prepare_graph(g, split, config)
    params, policy, report = train(g2, split, config, injection=summary)
    report.wall_time = time.perf_counter() - t0
    return params, policy, report, g2


def save_run(out_dir, params: GcnParams, policy: SamplerPolicy, report: RunReport) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {f"gcn/{k}": v for k, v in params.as_dict().items()}
    tensors.update({f"sampler/{k}": v for k, v in policy.as_dict().items()})
    save_checkpoint(out / "checkpoint.json", tensors,
                    {"sampler_variant": policy.variant, "K": params.K})
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    with (out / "epochs.csv").open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss", "val_accuracy", "val_dp"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(report.epochs)


def load_run_params(path) -> tuple[GcnParams, SamplerPolicy]:
    from .gcn import load_checkpoint

    tensors, meta = load_checkpoint(path)
    params = GcnParams.from_dict({k[4:]: v for k, v in tensors.items() if k.startswith("gcn/")})
    variant = meta.get("sampler_variant", "uniform")
    if variant == "fairsample":
        policy = SamplerPolicy(variant, tensors["sampler/Ws"], tensors["sampler/a"].reshape(2))
    else:
        policy = SamplerPolicy(variant)
    return params, policy


__all__ = ["TrainConfig", "RunReport", "Adam", "TrainingDiverged", "dp_regularizer", "train",
           "train_predictor", "prepare_graph", "run_experiment", "sample_batch",
           "sampled_probabilities", "save_run", "load_run_params"]
