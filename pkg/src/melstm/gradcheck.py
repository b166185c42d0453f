"""Finite-difference verification of every parameter tensor of a model."""

import numpy as np

from .heads import cross_entropy, cross_entropy_grad
from .memory import MemoryConfig
from .multitask import ArchitectureConfig, backward, build, forward
from .numerics import Rng, finite_diff_grad, relative_error

TOLERANCE = 1e-4


def make_instance(kind, d=4, K=3, M=4, m=3, T=6, C=2, tasks=None, batch=2, seed=0, scale=1.0, align="cosine", vocab=9):
    """A small random model plus random labelled token batches, one per task.

    The last example of each batch is one step shorter than the rest so the
    padding path is exercised as well.
    """
    if tasks is None:
        tasks = 1 if kind.startswith("single") else 2
    cfg = ArchitectureConfig(
        kind, [C] * tasks, vocab_size=vocab, embed_dim=m, hidden=d, memory=MemoryConfig(K, M, align), init_scale=scale
    )
    rng = Rng(seed)
    model = build(cfg, rng)
    data = []
    for _ in range(tasks):
        ids = rng.integers(0, vocab, size=(batch, T))
        mask = np.ones((batch, T), dtype=bool)
        if batch > 1 and T > 1:
            mask[-1, -1] = False
        labels = rng.integers(0, C, size=batch)
        data.append((ids, mask, labels))
    return model, data


def joint_objective(model, data, weights=None):
    weights = weights or [1.0] * len(data)
    total = 0.0
    for m, (ids, mask, labels) in enumerate(data):
        probs, _, _ = forward(model, m, ids, mask)
        total += weights[m] * cross_entropy(probs, labels)
    return total


def analytic_gradients(model, data, weights=None):
    weights = weights or [1.0] * len(data)
    model.zero_grad()
    for m, (ids, mask, labels) in enumerate(data):
        probs, _, cache = forward(model, m, ids, mask)
        backward(model, cache, cross_entropy_grad(probs, labels, weights[m]))
    return {k: s.grad.copy() for k, s in model.named_slots().items()}


def check(model, data, epsilon=1e-5, weights=None):
    """Max relative error per parameter tensor, analytic vs central differences."""
    analytic = analytic_gradients(model, data, weights)
    slots = model.named_slots()
    numeric = finite_diff_grad(lambda: joint_objective(model, data, weights), {k: s.value for k, s in slots.items()}, epsilon)
    return {k: float(relative_error(analytic[k], numeric[k]).max()) for k in slots}


def run(kind, seed=0, **dims):
    model, data = make_instance(kind, seed=seed, **dims)
    return check(model, data)
