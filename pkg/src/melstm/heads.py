"""Task-specific softmax output layers and the cross-entropy loss."""

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, GradSlot, init_uniform, softmax

CE_GUARD = 1e-12


@dataclass
class ClassifierHead:
    W: GradSlot  # C x d
    b: GradSlot  # C

    @classmethod
    def init(cls, rng, classes, d, half_width=0.1):
        if classes < 2:
            raise ValueError(f"a classifier head needs at least 2 classes, got {classes}")
        return cls(GradSlot(init_uniform(rng, classes, d, half_width)), GradSlot(init_uniform(rng, classes, 1, half_width)[:, 0]))

    @property
    def classes(self):
        return self.W.shape[0]

    def slots(self):
        return {"W": self.W, "b": self.b}


def logits(head, h):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != head.W.shape[1]:
        raise DimensionError(f"head expects hidden width {head.W.shape[1]}, got {h.shape}")
    return h @ head.W.value.T + head.b.value


def predict(head, h):
    """Class probabilities ``softmax(W h + b)``."""
    return softmax(logits(head, h))


def cross_entropy(pred, label):
    """``-log(pred[label] + 1e-12)``; ``pred``/``label`` may be batched, giving the batch mean."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label)
    C = pred.shape[-1]
    if np.any(label < 0) or np.any(label >= C):
        raise ValueError(f"label out of range for {C} classes")
    if pred.ndim == 1:
        return float(-np.log(pred[int(label)] + CE_GUARD))
    picked = pred[np.arange(pred.shape[0]), label]
    return float(np.mean(-np.log(picked + CE_GUARD)))


def cross_entropy_grad(probs, labels, scale=1.0):
    """Gradient of ``scale * mean CE`` with respect to the logits (guard included)."""
    B = probs.shape[0]
    rows = np.arange(B)
    py = probs[rows, labels]
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0
    w = (py / (py + CE_GUARD)) * (scale / B)
    return w[:, None] * (probs - onehot)


def head_backward(head, h, dlogits):
    """Accumulates head gradients; returns the gradient on ``h``."""
    head.W.grad += dlogits.T @ h
    head.b.grad += dlogits.sum(axis=0)
    return dlogits @ head.W.value
