"""Training runs, multi-seed replication, cap sweeps and the factorial grid."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .codec import get_approach, images
from .dataset import RecordStore, apply_cap, class_weights
from .errors import ConfigError, RunFailure
from .labeling import CLASS_NAMES, N_CLASSES
from .metrics import BINARY_NAMES, ConfusionMatrix, evaluate
from .models import Classifier, build, save_checkpoint
from .stats import StatSummary, paired_t
from .tinynn import bce_loss, make_optimizer, weighted_ce_loss

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (42, 0, 1, 2, 3, 4, 5, 6, 7, 8)
TASK_DEFAULTS = {
    "multiclass": {"optimizer": "sgd", "lr": 0.01, "epochs": 100, "batch_size": 32, "activation": "sigmoid"},
    "binary": {"optimizer": "adam", "lr": 0.01, "epochs": 20, "batch_size": 32, "activation": "tanh"},
}
DEFAULT_FACTORS = {
    "activation": ("sigmoid", "tanh"),
    "batchnorm": (False, True),
    "lr": (0.01, 0.001),
    "batch_size": (32, 64),
}


@dataclass(frozen=True)
class RunConfig:
    """One training run. Unset hyperparameters take the task's defaults."""

    task: str = "multiclass"
    approach: str = "2b"
    cap: int | None = 1000
    seed: int = 42
    epochs: int | None = None
    batch_size: int | None = None
    lr: float | None = None
    optimizer: str | None = None
    activation: str | None = None
    batchnorm: bool = False

    def __post_init__(self):
        if self.task not in TASK_DEFAULTS:
            raise ConfigError(f"task must be 'binary' or 'multiclass', got {self.task!r}")
        get_approach(self.approach)
        for k, v in TASK_DEFAULTS[self.task].items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        object.__setattr__(self, "approach", str(self.approach))
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.cap is not None and self.cap < 1:
            raise ConfigError("cap must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown run config keys: {sorted(extra)}")
        return cls(**d)

    def hash(self, data_fingerprint: str = "") -> str:
        blob = json.dumps({"config": self.to_dict(), "data": data_fingerprint}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class Splits:
    train: RecordStore
    val: RecordStore
    test: RecordStore

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for part in (self.train, self.val, self.test):
            h.update(len(part).to_bytes(8, "little"))
            h.update(part.vectors.tobytes())
            h.update(part.labels.tobytes())
        return h.hexdigest()[:16]


@dataclass
class TrainResult:
    model: Classifier
    best_epoch: int
    history: list[dict]  # one entry per epoch, epoch 0 = initialisation
    weights: np.ndarray

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch]["val_loss"]


# ---------------------------------------------------------------------------
# single run


def _loss_fn(task):
    return bce_loss if task == "binary" else weighted_ce_loss


def _dataset_loss(clf, x, y, w, chunk=2048) -> float:
    fn = _loss_fn(clf.task)
    total = 0.0
    for i in range(0, len(x), chunk):
        loss, _ = fn(clf.net.forward(x[i : i + chunk]), y[i : i + chunk], w)
        total += loss * len(x[i : i + chunk])
    return total / max(len(x), 1)


def _snapshot(net):
    return [a.copy() for _, a in net.named_arrays()]


def _restore(net, snap):
    it = iter(snap)
    for layer in net.layers:
        for n in layer.param_names + layer.buffer_names:
            getattr(layer, n)[...] = next(it)


def train(cfg: RunConfig, train_store: RecordStore, val_store: RecordStore) -> TrainResult:
    """Fit with per-epoch shuffling; return the model from the epoch with the lowest val loss.

    Both stores are capped here with ``cfg.cap``; class weights come from the
    capped training set.
    """
    a = get_approach(cfg.approach)
    tr = apply_cap(train_store, cfg.cap, cfg.task)
    va = apply_cap(val_store, cfg.cap, cfg.task)
    if len(tr) == 0:
        raise RunFailure("empty training set")
    k = 2 if cfg.task == "binary" else N_CLASSES
    names = BINARY_NAMES if cfg.task == "binary" else CLASS_NAMES
    w = class_weights(tr.targets(cfg.task), k, names).weights.astype(np.float32)

    clf = build(cfg.task, a.id, activation=cfg.activation, batchnorm=cfg.batchnorm, seed=cfg.seed)
    net = clf.net
    x_tr, y_tr = images(tr.vectors, a), tr.targets(cfg.task).astype(np.int64)
    x_va, y_va = images(va.vectors, a), va.targets(cfg.task).astype(np.int64)
    params, grads = net.params(), net.grads()
    opt = make_optimizer(cfg.optimizer, params, cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    loss_fn = _loss_fn(cfg.task)

    init_val = _dataset_loss(clf, x_va, y_va, w) if len(va) else float("nan")
    history = [{"epoch": 0, "train_loss": None, "val_loss": init_val}]
    best_loss, best_epoch, best = init_val, 0, _snapshot(net)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x_tr))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            net.zero_grad()
            z = net.forward(x_tr[idx], train=True)
            loss, g = loss_fn(z, y_tr[idx], w)
            if not math.isfinite(loss):
                raise RunFailure(
                    f"non-finite loss {loss} at epoch {epoch}, batch {start // cfg.batch_size} "
                    f"(lr={cfg.lr}, optimizer={cfg.optimizer}, max |logit|={float(np.abs(z).max())})"
                )
            net.backward(g)
            opt.step(params, grads)
            total += loss * len(idx)
        val = _dataset_loss(clf, x_va, y_va, w) if len(va) else float("nan")
        history.append({"epoch": epoch, "train_loss": total / len(x_tr), "val_loss": val})
        log.debug("epoch %d train %.5f val %.5f", epoch, total / len(x_tr), val)
        if len(va) and not math.isfinite(val):
            raise RunFailure(f"non-finite validation loss at epoch {epoch}")
        # without a validation set the last epoch wins
        if math.isnan(best_loss) or val < best_loss:
            best_loss, best_epoch, best = val, epoch, _snapshot(net)
    _restore(net, best)
    return TrainResult(clf, best_epoch, history, w)


@dataclass
class RunResult:
    config: dict
    config_hash: str
    seed: int
    accuracy: float  # percent
    recall: dict  # class name -> recall, None if the class is absent from the test set
    best_epoch: int
    wall_time: float
    param_count: int
    matrix: list
    attack_precision: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def run(cfg: RunConfig, data: Splits, checkpoint_dir=None, fingerprint: str | None = None) -> RunResult:
    t0 = time.perf_counter()
    fp = data.fingerprint() if fingerprint is None else fingerprint
    h = cfg.hash(fp)
    res = train(cfg, data.train, data.val)
    cm = evaluate(res.model, data.test)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        meta = {"config": cfg.to_dict(), "config_hash": h, "data": fp, "seed": cfg.seed,
                "best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss}
        save_checkpoint(res.model, Path(checkpoint_dir) / f"{h}.ckpt", meta)
    rec = cm.recall()
    ap = cm.attack_precision() if cfg.task == "binary" else None
    return RunResult(
        config=cfg.to_dict(), config_hash=h, seed=cfg.seed, accuracy=100.0 * cm.accuracy(),
        recall={n: (None if np.isnan(r) else float(r)) for n, r in zip(cm.names, rec)},
        best_epoch=res.best_epoch, wall_time=time.perf_counter() - t0,
        param_count=res.model.param_count, matrix=cm.counts.tolist(),
        attack_precision=None if ap is None or math.isnan(ap) else ap,
    )


# ---------------------------------------------------------------------------
# results ledger


class Ledger:
    """Append-only JSON-lines file of finished runs, keyed by config hash."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.runs: dict[str, dict] = {}
        if self.path is not None and self.path.exists():
            for line in self.path.read_text().splitlines():
                if line.strip():
                    obj = json.loads(line)
                    if obj.get("error") is None:
                        self.runs[obj["config_hash"]] = obj

    def get(self, h: str) -> RunResult | None:
        obj = self.runs.get(h)
        return RunResult(**obj) if obj is not None else None

    def add(self, r: RunResult) -> None:
        if r.error is None:
            self.runs[r.config_hash] = r.to_dict()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a") as fh:
                fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def _job(args):
    cfg, data, ckpt_dir, fp = args
    try:
        return run(cfg, data, ckpt_dir, fp)
    except RunFailure as exc:
        return RunResult(cfg.to_dict(), cfg.hash(fp), cfg.seed, float("nan"), {}, -1, 0.0, 0, [], error=str(exc))


def run_many(cfgs, data: Splits, jobs: int = 1, ledger: Ledger | None = None, checkpoint_dir=None) -> list[RunResult]:
    """Run configs not already in the ledger; results come back in input order."""
    ledger = ledger if ledger is not None else Ledger()
    fp = data.fingerprint()
    out: dict[int, RunResult] = {}
    todo = []
    for i, cfg in enumerate(cfgs):
        done = ledger.get(cfg.hash(fp))
        if done is not None:
            out[i] = done
        else:
            todo.append(i)
    args = [(cfgs[i], data, checkpoint_dir, fp) for i in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_job, args))
    else:
        results = [_job(a) for a in args]
    for i, r in zip(todo, results):
        ledger.add(r)
        out[i] = r
    return [out[i] for i in range(len(cfgs))]


# ---------------------------------------------------------------------------
# multi-seed, cap sweep, factorial


@dataclass
class MultiSeed:
    summary: StatSummary
    runs: list[RunResult]
    failed: list[int] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    def recall_means(self) -> dict:
        ok = [r for r in self.runs if r.error is None]
        names = ok[0].recall.keys() if ok else []
        out = {}
        for n in names:
            vals = [r.recall[n] for r in ok if r.recall.get(n) is not None]
            out[n] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self) -> dict:
        return {"summary": self.summary.to_dict(), "partial": self.partial, "failed_seeds": self.failed,
                "recall_mean": self.recall_means(), "runs": [r.to_dict() for r in self.runs]}


def multi_seed(cfg: RunConfig, seeds, data: Splits, jobs: int = 1, ledger=None, checkpoint_dir=None) -> MultiSeed:
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ConfigError("multi-seed needs at least two seeds")
    runs = run_many([replace(cfg, seed=s) for s in seeds], data, jobs, ledger, checkpoint_dir)
    failed = [r.seed for r in runs if r.error is not None]
    if failed:
        log.warning("seeds %s failed; summary is partial", failed)
    accs = [r.accuracy for r in runs if r.error is None]
    summary = StatSummary.from_values(accs)
    return MultiSeed(summary, runs, failed)


SWEEP_FIELDS = ["approach", "cap", "n", "mean", "std", "ci_low", "ci_high", "partial"]


def cap_sweep(cfg: RunConfig, approaches, caps, seeds, data: Splits, jobs=1, ledger=None) -> list[dict]:
    """One row per (approach, cap): accuracy summary plus mean per-class recall."""
    rows = []
    for a in approaches:
        for cap in caps:
            ms = multi_seed(replace(cfg, approach=str(a), cap=cap), seeds, data, jobs, ledger)
            s = ms.summary
            row = {"approach": str(a), "cap": cap, "n": s.n, "mean": s.mean, "std": s.std,
                   "ci_low": s.ci_low, "ci_high": s.ci_high, "partial": ms.partial}
            for n, v in ms.recall_means().items():
                row[f"recall_{n}"] = v
            rows.append(row)
    return rows


def write_csv(rows: list[dict], path) -> None:
    keys = list(rows[0].keys()) if rows else SWEEP_FIELDS
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def factorial_grid(base: RunConfig, factors: dict | None = None) -> list[dict]:
    """Distinct factor assignments; a factor whose two levels are equal collapses."""
    factors = DEFAULT_FACTORS if factors is None else factors
    for name in factors:
        if name not in RunConfig.__dataclass_fields__:
            raise ConfigError(f"unknown factor {name!r}")
    names = list(factors)
    levels = [list(dict.fromkeys(factors[n])) for n in names]
    return [dict(zip(names, combo)) for combo in itertools.product(*levels)]


@dataclass
class Factorial:
    rows: list[dict]  # one per (assignment, task)
    best: dict | None  # best multiclass assignment

    def spread(self, task: str) -> float:
        accs = [r["accuracy"] for r in self.rows if r["task"] == task and r["error"] is None]
        return max(accs) - min(accs) if accs else float("nan")


def factorial(base: RunConfig, data: Splits, factors: dict | None = None,
              tasks=("multiclass", "binary"), jobs=1, ledger=None) -> Factorial:
    grid = factorial_grid(base, factors)
    cfgs, keys = [], []
    for task in tasks:
        for assign in grid:
            cfgs.append(replace(base, task=task, epochs=None if task != base.task else base.epochs,
                                optimizer=None, **assign))
            keys.append((task, assign))
    runs = run_many(cfgs, data, jobs, ledger)
    rows = []
    for (task, assign), r in zip(keys, runs):
        rows.append({"task": task, **assign, "accuracy": r.accuracy, "best_epoch": r.best_epoch,
                     "config_hash": r.config_hash, "error": r.error})
    multi = [r for r in rows if r["task"] == "multiclass" and r["error"] is None]
    best = None
    if multi:
        top = max(multi, key=lambda r: r["accuracy"])
        best = {k: top[k] for k in grid[0]}
    return Factorial(rows, best)


def followup(winner: RunConfig, baseline: RunConfig, seeds, data: Splits, jobs=1, ledger=None) -> dict:
    """Multi-seed the winning config and compare it seed-by-seed with the baseline."""
    a = multi_seed(winner, seeds, data, jobs, ledger)
    b = multi_seed(baseline, seeds, data, jobs, ledger)
    pairs = [(x.accuracy, y.accuracy) for x, y in zip(a.runs, b.runs) if x.error is None and y.error is None]
    t, df, p = paired_t([x for x, _ in pairs], [y for _, y in pairs])
    return {"winner": a.to_dict(), "baseline": b.to_dict(), "paired_t": {"t": t, "df": df, "p": p}}


def confusion_from(result: RunResult) -> ConfusionMatrix:
    names = BINARY_NAMES if result.config["task"] == "binary" else CLASS_NAMES
    cm = ConfusionMatrix(names)
    cm.counts = np.asarray(result.matrix, dtype=np.int64)
    return cm
