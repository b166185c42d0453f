"""Joint multi-task training: weighted cross-entropy, L2, Adagrad, round-robin batches."""

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import pad_batch
from .heads import cross_entropy, cross_entropy_grad
from .multitask import ConfigError, backward, forward
from .numerics import Rng

ADAGRAD_EPS = 1e-6


class TrainingDiverged(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    l2: float = 0.0
    batch_size: int = 16
    epochs: int = 20
    seed: int = 1
    task_weights: list = None
    clip_norm: float = 5.0
    patience: int = 10
    eval_every: int = 1
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.l2 < 0:
            raise ConfigError("l2 must be non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if self.task_weights is not None and any(w < 0 for w in self.task_weights):
            raise ConfigError("task weights must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")

    def to_dict(self):
        return asdict(self)


MOVIE = {"learning_rate": 0.01, "l2": 0.0}
PRODUCT = {"learning_rate": 0.1, "l2": 1e-5}


@dataclass
class TaskBundle:
    name: str
    train: object
    dev: object = None
    test: object = None
    weight: float = 1.0


@dataclass
class EvalResult:
    accuracy: float
    correct: int
    total: int
    per_class: list  # [correct, total] per class
    loss: float = float("nan")


@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_dev: float = float("nan")
    epochs_run: int = 0
    steps: int = 0
    stopped_early: bool = False


def joint_loss(losses, weights, l2=0.0, slots=None):
    """``sum_m w_m L_m + (l2/2) sum ||theta||^2``."""
    if len(losses) != len(weights):
        raise ValueError(f"{len(losses)} losses but {len(weights)} weights")
    phi = float(sum(w * l for w, l in zip(weights, losses)))
    if l2 > 0 and slots:
        phi += 0.5 * l2 * sum(float((s.value * s.value).sum()) for s in slots)
    return phi


def adagrad_update(slot, lr, eps=ADAGRAD_EPS):
    """``accum += g^2; theta -= lr g / (sqrt(accum) + eps)``; clears the gradient."""
    g = slot.grad
    slot.accum += g * g
    slot.value -= lr * g / (np.sqrt(slot.accum) + eps)
    g.fill(0.0)
    return slot


def clip_global_norm(slots, max_norm):
    """Scale gradients so their joint L2 norm is at most ``max_norm``; returns the norm."""
    norm = math.sqrt(sum(float((s.grad * s.grad).sum()) for s in slots))
    if norm > max_norm:
        scale = max_norm / norm
        for s in slots:
            s.grad *= scale
    return norm


def evaluate(model, m, corpus, batch_size=64):
    """Argmax accuracy, per-class counts and mean cross-entropy of task ``m`` on ``corpus``."""
    if len(corpus) == 0:
        raise ValueError("cannot evaluate on an empty split")
    C = model.tasks[m].head.classes
    per_class = [[0, 0] for _ in range(C)]
    correct = 0
    loss_sum = 0.0
    for start in range(0, len(corpus), batch_size):
        chunk = corpus.examples[start : start + batch_size]
        ids, mask = pad_batch([s for _, s in chunk])
        labels = np.array([y for y, _ in chunk])
        probs, _, _ = forward(model, m, ids, mask)
        pred = probs.argmax(axis=1)
        loss_sum += cross_entropy(probs, labels) * len(chunk)
        for y, p in zip(labels, pred):
            per_class[y][1] += 1
            if y == p:
                per_class[y][0] += 1
                correct += 1
    return EvalResult(correct / len(corpus), correct, len(corpus), per_class, loss_sum / len(corpus))


def _epoch_batches(n, n_steps, batch_size, rng):
    batches = []
    while len(batches) < n_steps:
        order = rng.permutation(n)
        batches.extend(np.array_split(order, math.ceil(n / batch_size)))
    return batches[:n_steps]


def _snapshot(model):
    return {k: s.value.copy() for k, s in model.named_slots().items()}


def _restore(model, snap):
    for k, s in model.named_slots().items():
        s.value[...] = snap[k]


def train(model, bundles, cfg, log=None, rng=None):
    """Train ``model`` jointly on ``bundles`` (one per task, in task order).

    Each joint step takes one mini-batch from every task in index order,
    accumulates the weighted gradients, adds L2, clips each independent
    parameter group to ``clip_norm`` and applies Adagrad. ``log`` receives
    one metrics dict per (epoch, task, split).
    """
    if len(bundles) != len(model.tasks):
        raise ConfigError(f"model has {len(model.tasks)} tasks but {len(bundles)} datasets were given")
    if any(b.train is None or len(b.train) == 0 for b in bundles):
        raise ConfigError("every task needs a nonempty training split")
    weights = cfg.task_weights or [b.weight for b in bundles]
    if len(weights) != len(bundles):
        raise ConfigError("one task weight per task is required")
    rng = rng or Rng(cfg.seed).spawn(1)
    B = cfg.batch_size
    slots = list(model.named_slots().values())
    groups = model.clip_groups()
    has_dev = any(b.dev is not None for b in bundles)
    report = TrainReport()
    best_snap = None
    since_best = 0
    n_steps = max(math.ceil(len(b.train) / B) for b in bundles)
    emit = log or (lambda rec: None)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        plans = [_epoch_batches(len(b.train), n_steps, B, rng) for b in bundles]
        loss_sum = [0.0] * len(bundles)
        hits = [0] * len(bundles)
        seen = [0] * len(bundles)
        for step in range(n_steps):
            losses = []
            for m, bundle in enumerate(bundles):
                chunk = [bundle.train.examples[i] for i in plans[m][step]]
                ids, mask = pad_batch([s for _, s in chunk])
                labels = np.array([y for y, _ in chunk])
                probs, _, cache = forward(model, m, ids, mask)
                loss = cross_entropy(probs, labels)
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss for task {bundle.name} at epoch {epoch}, step {step}")
                losses.append(loss)
                loss_sum[m] += loss * len(chunk)
                hits[m] += int((probs.argmax(axis=1) == labels).sum())
                seen[m] += len(chunk)
                if weights[m] != 0:
                    backward(model, cache, cross_entropy_grad(probs, labels, weights[m]))
            if cfg.l2 > 0:
                for s in slots:
                    s.grad += cfg.l2 * s.value
            phi = joint_loss(losses, weights, cfg.l2, slots if cfg.l2 > 0 else None)
            if not math.isfinite(phi):
                raise TrainingDiverged(f"non-finite joint loss at epoch {epoch}, step {step}")
            if cfg.clip_norm is not None:
                for group in groups:
                    clip_global_norm(group, cfg.clip_norm)
            for s in slots:
                adagrad_update(s, cfg.learning_rate)
            report.steps += 1
        wall_ms = (time.perf_counter() - t0) * 1000.0
        recorded_ms = round(wall_ms, 3) if cfg.record_wall_time else None
        report.epochs_run = epoch
        for m, bundle in enumerate(bundles):
            rec = {"epoch": epoch, "task": bundle.name, "split": "train", "loss": loss_sum[m] / seen[m],
                   "accuracy": hits[m] / seen[m], "wall_ms": recorded_ms}
            report.history.append(rec)
            emit(rec)
        if has_dev and epoch % cfg.eval_every == 0:
            accs = []
            for m, bundle in enumerate(bundles):
                if bundle.dev is None:
                    continue
                res = evaluate(model, m, bundle.dev)
                accs.append(res.accuracy)
                rec = {"epoch": epoch, "task": bundle.name, "split": "dev", "loss": res.loss,
                       "accuracy": res.accuracy, "wall_ms": recorded_ms}
                report.history.append(rec)
                emit(rec)
            dev_acc = float(np.mean(accs))
            if best_snap is None or dev_acc > report.best_dev:
                report.best_dev = dev_acc
                report.best_epoch = epoch
                best_snap = _snapshot(model)
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    report.stopped_early = True
                    break
    if best_snap is not None:
        _restore(model, best_snap)
    else:
        report.best_epoch = report.epochs_run
    final_epoch = report.epochs_run
    for m, bundle in enumerate(bundles):
        if bundle.test is not None:
            res = evaluate(model, m, bundle.test)
            rec = {"epoch": final_epoch, "task": bundle.name, "split": "test", "loss": res.loss,
                   "accuracy": res.accuracy, "wall_ms": None}
            report.history.append(rec)
            emit(rec)
    return report
