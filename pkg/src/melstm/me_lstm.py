"""Memory-enhanced LSTM with a deep-fusion gate.

One step, in order:

1. attention over the step-entry memory, addressed by the previous key
2. read ``r = alpha^T M``
3. LSTM gates and cell ``c``
4. fusion gate ``g = sigmoid(W_r r + W_c c)``
5. ``h = o * tanh(c + g * (W_f r))``
6. emit ``k, e, a`` from ``h``
7. erase/add write with the same ``alpha``; ``k`` becomes the next addressing key
"""

from dataclasses import dataclass

import numpy as np

from . import memory as mem_ops
from .lstm import LstmParams, LstmState, gates_backward, gates_forward
from .numerics import ContractError, GradSlot, fast_sigmoid, init_uniform
from .memory import MemoryInterfaceParams, MemoryState


@dataclass
class FusionParams:
    W_f: GradSlot  # d x M
    W_r: GradSlot  # d x M
    W_c: GradSlot  # d x d

    @classmethod
    def init(cls, rng, d, M, half_width=0.1):
        return cls(
            GradSlot(init_uniform(rng, d, M, half_width)),
            GradSlot(init_uniform(rng, d, M, half_width)),
            GradSlot(init_uniform(rng, d, d, half_width)),
        )

    def slots(self):
        return {"W_f": self.W_f, "W_r": self.W_r, "W_c": self.W_c}


@dataclass
class MeLstmParams:
    cell: LstmParams
    iface: MemoryInterfaceParams
    fusion: FusionParams

    @classmethod
    def init(cls, rng, d, m, mem_config, half_width=0.1):
        cell = LstmParams.init(rng, d, m, half_width)
        iface = MemoryInterfaceParams.init(rng, mem_config, d, half_width)
        fusion = FusionParams.init(rng, d, mem_config.M, half_width)
        return cls(cell, iface, fusion)

    def slots(self):
        out = {f"cell.{k}": v for k, v in self.cell.slots().items()}
        out.update({f"iface.{k}": v for k, v in self.iface.slots().items()})
        out.update({f"fusion.{k}": v for k, v in self.fusion.slots().items()})
        return out


@dataclass
class StepTrace:
    t: int
    alpha: np.ndarray
    gate_g: np.ndarray
    read_norm: np.ndarray
    class_scores: np.ndarray = None
    gate_shared: np.ndarray = None
    alpha_shared: np.ndarray = None


def fuse_forward(fusion, r, c):
    """Fusion-gate contribution ``g * (W_f r)`` and the gate itself."""
    u = r @ fusion.W_f.value.T
    g = fast_sigmoid(r @ fusion.W_r.value.T + c @ fusion.W_c.value.T)
    return g * u, g, u


def fuse_backward(fusion, r, c, g, u, dq):
    """Reverse of :func:`fuse_forward`; returns (dr, dc)."""
    du = dq * g
    dpre = dq * u * g * (1.0 - g)
    d = dq.shape[-1]
    M = r.shape[-1]
    r2 = r.reshape(-1, M)
    du2 = du.reshape(-1, d)
    dpre2 = dpre.reshape(-1, d)
    fusion.W_f.grad += du2.T @ r2
    fusion.W_r.grad += dpre2.T @ r2
    fusion.W_c.grad += dpre2.T @ c.reshape(-1, d)
    dr = du @ fusion.W_f.value + dpre @ fusion.W_r.value
    dc = dpre @ fusion.W_c.value
    return dr, dc


class MeLstmCache:
    __slots__ = ("params", "addr", "r", "gates", "g", "u", "tq", "h", "keys", "alpha", "mem", "mask")

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw.get(k))


def _blend(mask, new, old):
    if mask is None:
        return new
    m = mask.reshape(mask.shape + (1,) * (new.ndim - mask.ndim))
    return np.where(m, new, old)


def me_lstm_step(params, prev, mem, x, t=0, mask=None):
    """One ME-LSTM step.

    ``mask`` (batch-shaped booleans) freezes the state of finished sequences.
    Returns ``(LstmState, MemoryState, StepTrace, cache)``.
    """
    x = np.asarray(x, dtype=np.float64)
    iface = params.iface
    alpha, addr = mem_ops.address(iface, mem.mem, mem.prev_key)
    r = mem_ops.read_raw(mem.mem, alpha)
    c, o, gc = gates_forward(params.cell, prev.h, prev.c, x)
    fused, g, u = fuse_forward(params.fusion, r, c)
    tq = np.tanh(c + fused)
    h = o * tq
    keys, kc = mem_ops.emit_keys(iface, h)
    new_mem = mem_ops.write_raw(mem.mem, alpha, keys.e, keys.a)
    state = LstmState(_blend(mask, h, prev.h), _blend(mask, c, prev.c))
    mstate = MemoryState(_blend(mask, new_mem, mem.mem), _blend(mask, keys.k, mem.prev_key))
    trace = StepTrace(t, alpha, g, np.sqrt((r * r).sum(axis=-1)))
    cache = MeLstmCache(
        params=params, addr=addr, r=r, gates=gc, g=g, u=u, tq=tq, h=h, keys=kc, alpha=alpha, mem=mem.mem, mask=mask
    )
    return state, mstate, trace, cache


def me_lstm_backward(cache, dh, dc, dmem, dkey):
    """Reverse of :func:`me_lstm_step`.

    Inputs are gradients on the step's outputs (h, c, memory, next key).
    Parameter gradients accumulate into the slots. Returns
    ``(dh_prev, dc_prev, dmem_prev, dkey_prev, dx)``.
    """
    if not isinstance(cache, MeLstmCache):
        raise ContractError("cache was not produced by me_lstm_step")
    p = cache.params
    mask = cache.mask
    if mask is not None:
        mcol = mask[..., None]
        mmat = mask[..., None, None]
        pass_h, pass_c = np.where(mcol, 0.0, dh), np.where(mcol, 0.0, dc)
        pass_mem, pass_key = np.where(mmat, 0.0, dmem), np.where(mcol, 0.0, dkey)
        dh, dc = np.where(mcol, dh, 0.0), np.where(mcol, dc, 0.0)
        dmem, dkey = np.where(mmat, dmem, 0.0), np.where(mcol, dkey, 0.0)
    keys = cache.keys.keys
    dmem_prev, dalpha, de, da = mem_ops.write_backward(cache.mem, cache.alpha, keys.e, keys.a, dmem)
    dh = dh + mem_ops.emit_keys_backward(cache.keys, dkey, de, da)
    gc = cache.gates
    tq = cache.tq
    do = dh * tq
    dq = dh * gc.o * (1.0 - tq * tq)
    dr, dc_f = fuse_backward(p.fusion, cache.r, gc.c, cache.g, cache.u, dq)
    dc = dc + dq + dc_f
    dx, dh_prev, dc_prev = gates_backward(gc, do, dc)
    dmem_r, dalpha_r = mem_ops.read_backward(cache.mem, cache.alpha, dr)
    dmem_prev += dmem_r
    dmem_a, dkey_prev = mem_ops.address_backward(cache.addr, dalpha + dalpha_r)
    dmem_prev += dmem_a
    if mask is not None:
        dh_prev += pass_h
        dc_prev += pass_c
        dmem_prev += pass_mem
        dkey_prev += pass_key
    return dh_prev, dc_prev, dmem_prev, dkey_prev, dx


def encode_sequence(params, tokens, mem_init=None, mask=None):
    """Fold :func:`me_lstm_step` over a sequence.

    ``tokens`` is ``(T, m)`` or ``(B, T, m)`` (already embedded). The memory
    starts from ``mem_init`` when given, else from the learned initial
    memory. Returns ``(h_T, traces, caches)``.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim < 2 or tokens.shape[-2] == 0:
        raise ValueError("encode_sequence needs a nonempty sequence")
    batch = tokens.shape[0] if tokens.ndim == 3 else None
    T = tokens.shape[-2]
    state = LstmState.zeros(params.cell.d, batch)
    mstate = mem_init if mem_init is not None else params.iface.initial_state(batch)
    traces, caches = [], []
    for t in range(T):
        x = tokens[..., t, :]
        mt = None if mask is None else mask[..., t]
        state, mstate, tr, cache = me_lstm_step(params, state, mstate, x, t, mt)
        traces.append(tr)
        caches.append(cache)
    return state.h, traces, caches


def encode_backward(params, caches, dh_T, dh_steps=None):
    """Backpropagate a gradient on ``h_T`` through a whole encoding.

    Accumulates all parameter gradients (``mem_init`` included). Returns the
    per-step input gradients, shape ``(T, ..., m)``. ``dh_steps`` optionally
    adds a gradient on every step's hidden state.
    """
    d = params.cell.d
    K, M = params.iface.config.K, params.iface.config.M
    lead = dh_T.shape[:-1]
    dh = dh_T
    dc = np.zeros(lead + (d,))
    dmem = np.zeros(lead + (K, M))
    dkey = np.zeros(lead + (M,))
    dxs = [None] * len(caches)
    for t in range(len(caches) - 1, -1, -1):
        if dh_steps is not None:
            dh = dh + dh_steps[t]
        dh, dc, dmem, dkey, dxs[t] = me_lstm_backward(caches[t], dh, dc, dmem, dkey)
    params.iface.mem_init.grad += dmem.reshape(-1, K, M).sum(axis=0)
    return np.stack(dxs)
