"""Peephole-free LSTM cell with a hand-written backward pass.

The packed affine output is ordered ``[c~; o; i; f]`` and the affine input
is ``[x; h_prev]``. Arrays may carry leading batch axes; the last axis is the
feature axis.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, DimensionError, GradSlot, fast_sigmoid, init_uniform

GATE_ORDER = ("cand", "o", "i", "f")


@dataclass
class LstmParams:
    W_p: GradSlot  # 4d x (m + d)
    b_p: GradSlot  # 4d
    d: int
    m: int

    @classmethod
    def init(cls, rng, d, m, half_width=0.1):
        W = init_uniform(rng, 4 * d, m + d, half_width)
        b = init_uniform(rng, 4 * d, 1, half_width)[:, 0]
        return cls(GradSlot(W), GradSlot(b), d, m)

    def slots(self):
        return {"W_p": self.W_p, "b_p": self.b_p}


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, d, batch=None):
        shape = (d,) if batch is None else (batch, d)
        return cls(np.zeros(shape), np.zeros(shape))


class GateCache:
    """Activations of one cell step, kept for the backward pass."""

    __slots__ = ("params", "xh", "cand", "o", "i", "f", "c_prev", "c")

    def __init__(self, params, xh, cand, o, i, f, c_prev, c):
        self.params = params
        self.xh = xh
        self.cand = cand
        self.o = o
        self.i = i
        self.f = f
        self.c_prev = c_prev
        self.c = c


class LstmCache:
    __slots__ = ("gates", "tanh_c")

    def __init__(self, gates, tanh_c):
        self.gates = gates
        self.tanh_c = tanh_c


def gates_forward(params, h_prev, c_prev, x):
    """Gates and new cell state; shared by the vanilla and memory-enhanced cells."""
    d, m = params.d, params.m
    if x.shape[-1] != m or h_prev.shape[-1] != d or c_prev.shape[-1] != d:
        raise DimensionError(
            f"lstm step expects x[..,{m}], h/c[..,{d}]; got {x.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    xh = np.concatenate([x, h_prev], axis=-1)
    z = xh @ params.W_p.value.T + params.b_p.value
    cand = np.tanh(z[..., :d])
    ofi = fast_sigmoid(z[..., d:])
    o = ofi[..., :d]
    i = ofi[..., d : 2 * d]
    f = ofi[..., 2 * d :]
    c = cand * i + c_prev * f
    return c, o, GateCache(params, xh, cand, o, i, f, c_prev, c)


def gates_backward(cache, do, dc):
    """Backward through the gates; accumulates into W_p, b_p.

    Returns gradients for x, h_prev and c_prev.
    """
    p = cache.params
    d, m = p.d, p.m
    dz = np.empty(cache.xh.shape[:-1] + (4 * d,))
    dz[..., :d] = dc * cache.i * (1.0 - cache.cand * cache.cand)
    dz[..., d : 2 * d] = do * cache.o * (1.0 - cache.o)
    dz[..., 2 * d : 3 * d] = dc * cache.cand * cache.i * (1.0 - cache.i)
    dz[..., 3 * d :] = dc * cache.c_prev * cache.f * (1.0 - cache.f)
    dz2 = dz.reshape(-1, 4 * d)
    p.W_p.grad += dz2.T @ cache.xh.reshape(-1, m + d)
    p.b_p.grad += dz2.sum(axis=0)
    dxh = dz @ p.W_p.value
    return dxh[..., :m], dxh[..., m:], dc * cache.f


def lstm_step(params, prev, x):
    """One vanilla LSTM step. Returns the next state and a cache for backward."""
    x = np.asarray(x, dtype=np.float64)
    c, o, gc = gates_forward(params, prev.h, prev.c, x)
    tc = np.tanh(c)
    return LstmState(o * tc, c), LstmCache(gc, tc)


def lstm_backward(params, cache, grad_h, grad_c):
    """Reverse of :func:`lstm_step`.

    ``grad_h``/``grad_c`` are gradients flowing into the step's outputs.
    Parameter gradients are added to the slots. Returns
    ``(LstmState(dh_prev, dc_prev), dx)``.
    """
    if not isinstance(cache, LstmCache) or cache.gates.params is not params:
        raise ContractError("cache was not produced by lstm_step with these parameters")
    g = cache.gates
    if grad_h.shape != g.c.shape or grad_c.shape != g.c.shape:
        raise ContractError(f"upstream gradient shape {grad_h.shape} does not match cache {g.c.shape}")
    tc = cache.tanh_c
    do = grad_h * tc
    dc = grad_c + grad_h * g.o * (1.0 - tc * tc)
    dx, dh_prev, dc_prev = gates_backward(g, do, dc)
    return LstmState(dh_prev, dc_prev), dx


def lstm_encode(params, xs, mask=None):
    """Run the cell over ``xs`` of shape ``(T, m)`` or ``(B, T, m)`` from a zero state.

    Finished sequences (``mask`` False) keep their state. Returns
    ``(h_T, per-step hidden states, caches)``.
    """
    batch = xs.shape[0] if xs.ndim == 3 else None
    state = LstmState.zeros(params.d, batch)
    hs, caches = [], []
    for t in range(xs.shape[-2]):
        new, cache = lstm_step(params, state, xs[..., t, :])
        if mask is not None:
            mt = mask[..., t, None]
            new = LstmState(np.where(mt, new.h, state.h), np.where(mt, new.c, state.c))
        state = new
        hs.append(state.h)
        caches.append(cache)
    return state.h, hs, caches


def lstm_encode_backward(params, caches, dh_T, mask=None, dh_steps=None):
    """Reverse of :func:`lstm_encode`; returns per-step input gradients ``(T, ..., m)``.

    ``dh_steps`` optionally adds a gradient on every step's hidden state.
    """
    dh = dh_T
    dc = np.zeros_like(dh_T)
    dxs = [None] * len(caches)
    for t in range(len(caches) - 1, -1, -1):
        if dh_steps is not None:
            dh = dh + dh_steps[t]
        if mask is None:
            prev, dxs[t] = lstm_backward(params, caches[t], dh, dc)
            dh, dc = prev.h, prev.c
            continue
        mt = mask[..., t, None]
        prev, dxs[t] = lstm_backward(params, caches[t], np.where(mt, dh, 0.0), np.where(mt, dc, 0.0))
        dh = prev.h + np.where(mt, 0.0, dh)
        dc = prev.c + np.where(mt, 0.0, dc)
    return np.stack(dxs)
