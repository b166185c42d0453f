"""Per-epoch wall-clock comparison of the four architectures on one workload."""

import statistics
import time
from dataclasses import dataclass, field

from .data import SynthSpec, synth_tasks
from .memory import MemoryConfig
from .multitask import KINDS, ArchitectureConfig, build
from .numerics import Rng
from .training import TaskBundle, TrainConfig, train


@dataclass
class BenchSetup:
    hidden: int = 100
    embed_dim: int = 100
    K: int = 50
    M: int = 20
    tasks: int = 2
    examples: int = 64
    length: tuple = (8, 16)
    batch_size: int = 16
    repeats: int = 5
    warmup: int = 1
    seed: int = 0
    kinds: list = field(default_factory=lambda: list(KINDS))


def _trainer(kind, setup, corpora, vocab_size):
    cfg = ArchitectureConfig(kind, [2] * setup.tasks, vocab_size, setup.embed_dim, setup.hidden,
                             MemoryConfig(setup.K, setup.M))
    model = build(cfg, Rng(setup.seed))
    bundles = [TaskBundle(f"task{m}", c) for m, c in enumerate(corpora)]
    tcfg = TrainConfig(batch_size=setup.batch_size, epochs=1, seed=setup.seed)
    return lambda: train(model, bundles, tcfg)


def _timed(epoch):
    t0 = time.perf_counter()
    epoch()
    return time.perf_counter() - t0


def time_kind(kind, setup, corpora, vocab_size):
    """Seconds per epoch for ``repeats`` timed epochs after ``warmup`` untimed ones."""
    epoch = _trainer(kind, setup, corpora, vocab_size)
    for _ in range(setup.warmup):
        epoch()
    return [_timed(epoch) for _ in range(setup.repeats)]


def run(setup=None):
    """Time every kind on identical data, dims and step counts.

    Timed epochs alternate between kinds after each kind's warmup.

    The report gives the per-epoch times, their median, the relative spread
    ``(max - min) / median`` and each median relative to ``single-lstm``.
    """
    setup = setup or BenchSetup()
    spec = SynthSpec(tasks=setup.tasks, size=setup.examples, length=tuple(setup.length), seed=setup.seed)
    corpora, vocab = synth_tasks(spec)
    report = {"setup": {k: (list(v) if isinstance(v, tuple) else v) for k, v in setup.__dict__.items()}, "kinds": {}}
    epochs = {kind: _trainer(kind, setup, corpora, len(vocab)) for kind in setup.kinds}
    for epoch in epochs.values():
        for _ in range(setup.warmup):
            epoch()
    # interleave kinds so drift in machine load hits all of them alike
    times = {kind: [] for kind in setup.kinds}
    for _ in range(setup.repeats):
        for kind, epoch in epochs.items():
            times[kind].append(_timed(epoch))
    for kind, ts in times.items():
        med = statistics.median(ts)
        report["kinds"][kind] = {"epoch_seconds": ts, "median": med, "spread": (max(ts) - min(ts)) / med}
    base = report["kinds"].get("single-lstm")
    if base:
        for entry in report["kinds"].values():
            entry["ratio_to_lstm"] = entry["median"] / base["median"]
    return report
