"""Multi-task topologies over task-specific LSTMs.

``single-lstm`` / ``single-me-lstm``
    Independent per-task models (own embeddings, no shared parameters).
``arc1``
    Every task's ME-LSTM uses one global memory: the key-emission
    interface, fusion weights and learned initial memory are shared objects.
``arc2``
    Each task owns a local memory driven by its hidden state. The local read
    vector addresses and writes a shared global memory through a shared
    interface, and the global read enters the hidden state through a second,
    shared fusion gate.

Memories start from their learned initial value at the beginning of every
sequence. Word embeddings are one shared table for ``arc1``/``arc2``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import memory as mem_ops
from .heads import ClassifierHead, head_backward, logits
from .lstm import LstmParams, LstmState, gates_backward, gates_forward, lstm_encode, lstm_encode_backward
from .me_lstm import (
    FusionParams,
    MeLstmParams,
    StepTrace,
    _blend,
    encode_backward,
    encode_sequence,
    fuse_backward,
    fuse_forward,
    me_lstm_step,
)
from .memory import MemoryConfig, MemoryInterfaceParams, MemoryState
from .numerics import ContractError, DimensionError, GradSlot, init_uniform
from .heads import predict

KINDS = ("single-lstm", "single-me-lstm", "arc1", "arc2")


class ConfigError(ValueError):
    """An architecture, training or run configuration is invalid."""


@dataclass
class ArchitectureConfig:
    kind: str
    classes: list
    vocab_size: int
    embed_dim: int = 100
    hidden: int = 100
    memory: MemoryConfig = field(default_factory=lambda: MemoryConfig(50, 20))
    local_memory: MemoryConfig = None
    init_scale: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"architecture kind must be one of {KINDS}, got {self.kind!r}")
        self.classes = [int(c) for c in self.classes]
        if not self.classes:
            raise ConfigError("at least one task is required")
        if self.kind in ("arc1", "arc2") and len(self.classes) < 2:
            raise ConfigError(f"{self.kind} shares memory across tasks and needs at least 2 tasks")
        if any(c < 2 for c in self.classes):
            raise ConfigError("every task needs at least 2 classes")
        if self.vocab_size < 1 or self.embed_dim < 1 or self.hidden < 1:
            raise ConfigError("vocab_size, embed_dim and hidden must be positive")
        if self.init_scale <= 0:
            raise ConfigError("init_scale must be positive")
        if isinstance(self.memory, dict):
            self.memory = MemoryConfig(**self.memory)
        if isinstance(self.local_memory, dict):
            self.local_memory = MemoryConfig(**self.local_memory)
        if self.kind == "arc2" and self.local_memory is None:
            self.local_memory = self.memory

    @property
    def tasks(self):
        return len(self.classes)

    def to_dict(self):
        return {
            "kind": self.kind,
            "classes": list(self.classes),
            "vocab_size": self.vocab_size,
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "memory": self.memory.to_dict(),
            "local_memory": None if self.local_memory is None else self.local_memory.to_dict(),
            "init_scale": self.init_scale,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["memory"] = MemoryConfig(**d["memory"])
        if d.get("local_memory") is not None:
            d["local_memory"] = MemoryConfig(**d["local_memory"])
        return cls(**d)


@dataclass
class HybridParams:
    """Per-task view of an ARC-II encoder; ``global_iface``/``global_fusion`` are shared."""

    cell: LstmParams
    local: MemoryInterfaceParams
    local_fusion: FusionParams
    global_iface: MemoryInterfaceParams
    global_fusion: FusionParams

    def slots(self):
        out = {f"cell.{k}": v for k, v in self.cell.slots().items()}
        out.update({f"local.{k}": v for k, v in self.local.slots().items()})
        out.update({f"local_fusion.{k}": v for k, v in self.local_fusion.slots().items()})
        out.update({f"global.{k}": v for k, v in self.global_iface.slots().items()})
        out.update({f"global_fusion.{k}": v for k, v in self.global_fusion.slots().items()})
        return out


@dataclass
class TaskModel:
    index: int
    embedding: GradSlot
    encoder: object
    head: ClassifierHead

    def slots(self):
        out = {"embedding": self.embedding}
        out.update({f"encoder.{k}": v for k, v in self.encoder.slots().items()})
        out.update({f"head.{k}": v for k, v in self.head.slots().items()})
        return out


@dataclass
class SharedState:
    global_mem: MemoryState
    local_mem: list = None


class Model:
    """A bundle of task models with their parameter tying."""

    def __init__(self, config, tasks, shared_ids):
        self.config = config
        self.tasks = tasks
        self._shared_ids = shared_ids
        self.global_write = True

    @property
    def kind(self):
        return self.config.kind

    def named_slots(self):
        """Unique trainable slots in a fixed order; shared ones are named ``shared.*``."""
        out = {}
        seen = set()
        for task in self.tasks:
            for name, slot in task.slots().items():
                if id(slot) in seen:
                    continue
                seen.add(id(slot))
                prefix = "shared" if id(slot) in self._shared_ids else f"task{task.index}"
                out[f"{prefix}.{name}"] = slot
        return out

    def exclusive_slots(self, index):
        return {k: v for k, v in self.named_slots().items() if k.startswith(f"task{index}.")}

    def shared_slots(self):
        return {k: v for k, v in self.named_slots().items() if k.startswith("shared.")}

    def clip_groups(self):
        """Slot groups that share no parameters; gradient clipping is applied per group."""
        if self.kind in ("single-lstm", "single-me-lstm"):
            return [list(t.slots().values()) for t in self.tasks]
        return [list(self.named_slots().values())]

    def num_parameters(self):
        return sum(s.size for s in self.named_slots().values())

    def zero_grad(self):
        for s in self.named_slots().values():
            s.zero_grad()

    def initial_shared_state(self, batch=None):
        t0 = self.tasks[0].encoder
        if self.kind == "arc1":
            return SharedState(t0.iface.initial_state(batch))
        if self.kind == "arc2":
            return SharedState(
                t0.global_iface.initial_state(batch), [t.encoder.local.initial_state(batch) for t in self.tasks]
            )
        raise ContractError(f"{self.kind} has no shared memory")


def build(config, rng):
    """Allocate parameters for ``config`` with the tying its kind requires."""
    if isinstance(config, dict):
        config = ArchitectureConfig.from_dict(config)
    s = config.init_scale
    d, m = config.hidden, config.embed_dim
    shared = set()
    tasks = []
    shared_emb = None
    g_iface = g_fusion = None
    if config.kind in ("arc1", "arc2"):
        shared_emb = GradSlot(init_uniform(rng, config.vocab_size, m, s))
        shared.add(id(shared_emb))
    if config.kind == "arc1":
        g_iface = MemoryInterfaceParams.init(rng, config.memory, d, s)
        g_fusion = FusionParams.init(rng, d, config.memory.M, s)
    elif config.kind == "arc2":
        g_iface = MemoryInterfaceParams.init(rng, config.memory, config.local_memory.M, s)
        g_fusion = FusionParams.init(rng, d, config.memory.M, s)
    for obj in (g_iface, g_fusion):
        if obj is not None:
            shared.update(id(v) for v in obj.slots().values())
    for idx, classes in enumerate(config.classes):
        emb = shared_emb if shared_emb is not None else GradSlot(init_uniform(rng, config.vocab_size, m, s))
        cell = LstmParams.init(rng, d, m, s)
        if config.kind == "single-lstm":
            enc = cell
        elif config.kind == "single-me-lstm":
            enc = MeLstmParams(cell, MemoryInterfaceParams.init(rng, config.memory, d, s), FusionParams.init(rng, d, config.memory.M, s))
        elif config.kind == "arc1":
            enc = MeLstmParams(cell, g_iface, g_fusion)
        else:
            local = MemoryInterfaceParams.init(rng, config.local_memory, d, s)
            enc = HybridParams(cell, local, FusionParams.init(rng, d, config.local_memory.M, s), g_iface, g_fusion)
        head = ClassifierHead.init(rng, classes, d, s)
        tasks.append(TaskModel(idx, emb, enc, head))
    return Model(config, tasks, frozenset(shared))


# -- ARC-I / ARC-II steps ------------------------------------------------------


def _task(model, m):
    if not 0 <= m < len(model.tasks):
        raise KeyError(f"unknown task id {m}")
    return model.tasks[m]


def arc1_step(model, m, prev, global_mem, x, t=0, mask=None):
    """ME-LSTM step of task ``m`` on the shared global memory.

    Returns ``(state, global_mem, trace, cache)``.
    """
    if model.kind != "arc1":
        raise ContractError("arc1_step needs an arc1 model")
    return me_lstm_step(_task(model, m).encoder, prev, global_mem, x, t, mask)


class HybridCache:
    __slots__ = (
        "params", "addr_l", "rl", "gkeys", "addr_g", "rg", "gates", "gl", "ul", "gg", "ug", "tq", "h",
        "lkeys", "local_mem", "global_mem", "mask", "global_write",
    )

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw.get(k))


def hybrid_step(params, prev, local, global_mem, x, t=0, mask=None, global_write=True):
    """One ARC-II step for a single task.

    Local memory is addressed with the previous local key; the local read
    emits the global key/erase/add vectors through the shared interface; both
    reads feed their own fusion gates; the local memory is written from ``h``
    and the global memory from the local read.
    """
    x = np.asarray(x, dtype=np.float64)
    alpha_l, addr_l = mem_ops.address(params.local, local.mem, local.prev_key)
    rl = mem_ops.read_raw(local.mem, alpha_l)
    gkeys, gkc = mem_ops.emit_keys(params.global_iface, rl)
    alpha_g, addr_g = mem_ops.address(params.global_iface, global_mem.mem, gkeys.k)
    rg = mem_ops.read_raw(global_mem.mem, alpha_g)
    c, o, gc = gates_forward(params.cell, prev.h, prev.c, x)
    fl, gl, ul = fuse_forward(params.local_fusion, rl, c)
    fg, gg, ug = fuse_forward(params.global_fusion, rg, c)
    tq = np.tanh(c + fl + fg)
    h = o * tq
    lkeys, lkc = mem_ops.emit_keys(params.local, h)
    new_local = mem_ops.write_raw(local.mem, alpha_l, lkeys.e, lkeys.a)
    new_global = mem_ops.write_raw(global_mem.mem, alpha_g, gkeys.e, gkeys.a) if global_write else global_mem.mem
    state = LstmState(_blend(mask, h, prev.h), _blend(mask, c, prev.c))
    lstate = MemoryState(_blend(mask, new_local, local.mem), _blend(mask, lkeys.k, local.prev_key))
    gstate = MemoryState(_blend(mask, new_global, global_mem.mem), _blend(mask, gkeys.k, global_mem.prev_key))
    trace = StepTrace(t, alpha_l, gl, np.sqrt((rl * rl).sum(axis=-1)), gate_shared=gg, alpha_shared=alpha_g)
    cache = HybridCache(
        params=params, addr_l=addr_l, rl=rl, gkeys=gkc, addr_g=addr_g, rg=rg, gates=gc, gl=gl, ul=ul, gg=gg,
        ug=ug, tq=tq, h=h, lkeys=lkc, local_mem=local.mem, global_mem=global_mem.mem, mask=mask,
        global_write=global_write,
    )
    return state, lstate, gstate, trace, cache


def arc2_step(model, m, prev, local_mem, global_mem, x, t=0, mask=None):
    """Returns ``(state, local_mem, global_mem, trace, cache)``."""
    if model.kind != "arc2":
        raise ContractError("arc2_step needs an arc2 model")
    return hybrid_step(_task(model, m).encoder, prev, local_mem, global_mem, x, t, mask, model.global_write)


def hybrid_backward(cache, dh, dc, dml, dkl, dmg):
    """Reverse of :func:`hybrid_step`.

    Returns ``(dh_prev, dc_prev, dlocal_prev, dlocal_key_prev, dglobal_prev, dx)``.
    """
    if not isinstance(cache, HybridCache):
        raise ContractError("cache was not produced by hybrid_step")
    p = cache.params
    mask = cache.mask
    if mask is not None:
        mcol, mmat = mask[..., None], mask[..., None, None]
        passing = [np.where(mcol, 0.0, dh), np.where(mcol, 0.0, dc), np.where(mmat, 0.0, dml),
                   np.where(mcol, 0.0, dkl), np.where(mmat, 0.0, dmg)]
        dh, dc = np.where(mcol, dh, 0.0), np.where(mcol, dc, 0.0)
        dml, dkl, dmg = np.where(mmat, dml, 0.0), np.where(mcol, dkl, 0.0), np.where(mmat, dmg, 0.0)
    lk = cache.lkeys.keys
    dml_prev, dal, del_, dadd_l = mem_ops.write_backward(cache.local_mem, cache.addr_l.alpha, lk.e, lk.a, dml)
    dh = dh + mem_ops.emit_keys_backward(cache.lkeys, dkl, del_, dadd_l)
    gk = cache.gkeys.keys
    if cache.global_write:
        dmg_prev, dag, deg, dadd_g = mem_ops.write_backward(cache.global_mem, cache.addr_g.alpha, gk.e, gk.a, dmg)
    else:
        dmg_prev, dag = dmg.copy(), np.zeros_like(cache.addr_g.alpha)
        deg, dadd_g = np.zeros_like(gk.e), np.zeros_like(gk.a)
    gc = cache.gates
    tq = cache.tq
    do = dh * tq
    dq = dh * gc.o * (1.0 - tq * tq)
    drl, dc_l = fuse_backward(p.local_fusion, cache.rl, gc.c, cache.gl, cache.ul, dq)
    drg, dc_g = fuse_backward(p.global_fusion, cache.rg, gc.c, cache.gg, cache.ug, dq)
    dx, dh_prev, dc_prev = gates_backward(gc, do, dc + dq + dc_l + dc_g)
    dmg_r, dag_r = mem_ops.read_backward(cache.global_mem, cache.addr_g.alpha, drg)
    dmg_prev += dmg_r
    dmg_a, dkg = mem_ops.address_backward(cache.addr_g, dag + dag_r)
    dmg_prev += dmg_a
    drl = drl + mem_ops.emit_keys_backward(cache.gkeys, dkg, deg, dadd_g)
    dml_r, dal_r = mem_ops.read_backward(cache.local_mem, cache.addr_l.alpha, drl)
    dml_prev += dml_r
    dml_a, dkl_prev = mem_ops.address_backward(cache.addr_l, dal + dal_r)
    dml_prev += dml_a
    out = [dh_prev, dc_prev, dml_prev, dkl_prev, dmg_prev]
    if mask is not None:
        out = [a + b for a, b in zip(out, passing)]
    return (*out, dx)


def hybrid_encode(params, xs, mask=None, global_write=True):
    batch = xs.shape[0] if xs.ndim == 3 else None
    state = LstmState.zeros(params.cell.d, batch)
    local = params.local.initial_state(batch)
    glob = params.global_iface.initial_state(batch)
    traces, caches = [], []
    for t in range(xs.shape[-2]):
        mt = None if mask is None else mask[..., t]
        state, local, glob, tr, cache = hybrid_step(params, state, local, glob, xs[..., t, :], t, mt, global_write)
        traces.append(tr)
        caches.append(cache)
    return state.h, traces, caches


def hybrid_encode_backward(params, caches, dh_T, dh_steps=None):
    lead = dh_T.shape[:-1]
    d = params.cell.d
    lc, gcfg = params.local.config, params.global_iface.config
    dh, dc = dh_T, np.zeros(lead + (d,))
    dml, dkl = np.zeros(lead + (lc.K, lc.M)), np.zeros(lead + (lc.M,))
    dmg = np.zeros(lead + (gcfg.K, gcfg.M))
    dxs = [None] * len(caches)
    for t in range(len(caches) - 1, -1, -1):
        if dh_steps is not None:
            dh = dh + dh_steps[t]
        dh, dc, dml, dkl, dmg, dxs[t] = hybrid_backward(caches[t], dh, dc, dml, dkl, dmg)
    params.local.mem_init.grad += dml.reshape(-1, lc.K, lc.M).sum(axis=0)
    params.global_iface.mem_init.grad += dmg.reshape(-1, gcfg.K, gcfg.M).sum(axis=0)
    return np.stack(dxs)


# -- batched forward / backward ------------------------------------------------


class ForwardCache:
    __slots__ = ("task", "ids", "last", "h", "hs", "enc", "traces")

    def __init__(self, task, ids, last, h, hs, enc, traces):
        self.task = task
        self.ids = ids
        self.last = last
        self.h = h
        self.hs = hs
        self.enc = enc
        self.traces = traces


def _last_steps(mask, B, T):
    """Index of each row's final real step; ``mask`` must be right-padded."""
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (B, T):
        raise DimensionError(f"mask shape {mask.shape} does not match ids {(B, T)}")
    lengths = mask.sum(axis=1)
    if np.any(lengths == 0):
        raise ValueError("every sequence in a batch needs at least one token")
    if not np.array_equal(mask, np.arange(T)[None, :] < lengths[:, None]):
        raise ValueError("mask must be right-padded (real tokens first)")
    if np.all(lengths == T):
        return None
    return lengths - 1


def encode(model, m, ids, mask=None):
    """Encode a batch of token-id sequences ``(B, T)`` for task ``m``; returns ``(h, cache)``.

    Sequences are right-padded; each row's representation is its hidden
    state at its last real token. Padded steps are computed but never reach
    the output, so they contribute nothing to the loss or its gradient.
    """
    task = _task(model, m)
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ValueError("encode expects a nonempty (batch, time) array of token ids")
    last = _last_steps(mask, *ids.shape)
    xs = task.embedding.value[ids]
    enc = task.encoder
    if model.kind == "single-lstm":
        h, hs, caches = lstm_encode(enc, xs)
        traces = hs
    elif model.kind == "arc2":
        h, traces, caches = hybrid_encode(enc, xs, None, model.global_write)
        hs = [c.h for c in caches]
    else:
        h, traces, caches = encode_sequence(enc, xs)
        hs = [c.h for c in caches]
    if last is not None:
        h = np.stack(hs)[last, np.arange(len(last))]
    return h, ForwardCache(m, ids, last, h, hs, caches, traces)


def forward(model, m, ids, mask=None):
    """Class probabilities for a batch; returns ``(probs, logits, cache)``."""
    h, cache = encode(model, m, ids, mask)
    z = logits(model.tasks[m].head, h)
    z = z - z.max(axis=-1, keepdims=True)
    ex = np.exp(z)
    return ex / ex.sum(axis=-1, keepdims=True), z, cache


def backward(model, cache, dlogits):
    """Accumulate parameter gradients for a loss gradient on the task logits."""
    task = model.tasks[cache.task]
    dh = head_backward(task.head, cache.h, dlogits)
    dh_T, dh_steps = dh, None
    if cache.last is not None:
        T, B = len(cache.hs), dh.shape[0]
        dh_steps = np.zeros((T,) + dh.shape)
        dh_steps[cache.last, np.arange(B)] = dh
        dh_T = np.zeros_like(dh)
    enc = task.encoder
    if model.kind == "single-lstm":
        dxs = lstm_encode_backward(enc, cache.enc, dh_T, dh_steps=dh_steps)
    elif model.kind == "arc2":
        dxs = hybrid_encode_backward(enc, cache.enc, dh_T, dh_steps)
    else:
        dxs = encode_backward(enc, cache.enc, dh_T, dh_steps)
    dX = np.swapaxes(dxs, 0, 1)
    m = task.embedding.shape[1]
    np.add.at(task.embedding.grad, cache.ids.reshape(-1), dX.reshape(-1, m))


def step_outputs(model, m, ids):
    """Per-timestep probabilities, gates and attention for one unpadded sequence.

    Returns a list of dicts with ``probs``, ``gate``, ``alpha`` and, for arc2,
    ``gate_shared`` and ``alpha_shared``.
    """
    ids = np.asarray(ids)[None, :]
    _, cache = encode(model, m, ids)
    head = model.tasks[m].head
    out = []
    for t, item in enumerate(cache.traces):
        if model.kind == "single-lstm":
            h_t = item
            rec = {"gate": np.zeros(0), "alpha": np.zeros(0)}
        else:
            h_t = cache.enc[t].h
            rec = {"gate": item.gate_g[0], "alpha": item.alpha[0]}
            if model.kind == "arc2":
                rec["gate_shared"] = item.gate_shared[0]
                rec["alpha_shared"] = item.alpha_shared[0]
        rec["probs"] = predict(head, h_t)[0]
        out.append(rec)
    return out
