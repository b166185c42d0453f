"""Content-addressed external memory: key emission, alignment, read, erase/add write.

The memory is a K x M matrix of K segments. One attention distribution per
step drives both the read and the write. All functions broadcast over leading
batch axes, so ``mem`` may be ``(K, M)`` or ``(B, K, M)``.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import ContractError, DimensionError, GradSlot, fast_sigmoid, init_uniform

COSINE_EPS = 1e-8
ALIGN_KINDS = ("cosine", "additive")


@dataclass(frozen=True)
class MemoryConfig:
    K: int
    M: int
    align: str = "cosine"

    def __post_init__(self):
        if self.K < 1 or self.M < 1:
            raise ValueError(f"memory needs K >= 1 and M >= 1, got K={self.K}, M={self.M}")
        if self.align not in ALIGN_KINDS:
            raise ValueError(f"align must be one of {ALIGN_KINDS}, got {self.align!r}")

    def to_dict(self):
        return {"K": self.K, "M": self.M, "align": self.align}


@dataclass
class MemoryState:
    mem: np.ndarray
    prev_key: np.ndarray


@dataclass
class MemoryKeys:
    k: np.ndarray
    e: np.ndarray
    a: np.ndarray


@dataclass
class MemoryInterfaceParams:
    """Key-emission affine map, learned initial memory and (optionally) additive-align weights.

    ``source`` is the width of the vector the keys are emitted from: the
    hidden size for a task memory, the local segment size for the ARC-II
    global memory.
    """

    config: MemoryConfig
    source: int
    W_m: GradSlot
    b_m: GradSlot
    mem_init: GradSlot
    v: GradSlot = None
    W_a: GradSlot = None

    @classmethod
    def init(cls, rng, config, source, half_width=0.1):
        K, M = config.K, config.M
        W_m = GradSlot(init_uniform(rng, 3 * M, source, half_width))
        b_m = GradSlot(init_uniform(rng, 3 * M, 1, half_width)[:, 0])
        mem_init = GradSlot(init_uniform(rng, K, M, half_width))
        v = W_a = None
        if config.align == "additive":
            v = GradSlot(init_uniform(rng, M, 1, half_width)[:, 0])
            W_a = GradSlot(init_uniform(rng, M, 2 * M, half_width))
        return cls(config, source, W_m, b_m, mem_init, v, W_a)

    def slots(self):
        out = {"W_m": self.W_m, "b_m": self.b_m, "mem_init": self.mem_init}
        if self.config.align == "additive":
            out["v"] = self.v
            out["W_a"] = self.W_a
        return out

    def initial_state(self, batch=None):
        mem = self.mem_init.value
        key = np.zeros(self.config.M)
        if batch is not None:
            mem = np.broadcast_to(mem, (batch,) + mem.shape).copy()
            key = np.zeros((batch, self.config.M))
        else:
            mem = mem.copy()
        return MemoryState(mem, key)


# -- key emission -----------------------------------------------------------


class KeyCache:
    __slots__ = ("params", "src", "keys")

    def __init__(self, params, src, keys):
        self.params = params
        self.src = src
        self.keys = keys


def emit_keys(params, h):
    """``[k; e; a] = [tanh; sigmoid; tanh](W_m h + b_m)``; returns keys and a cache."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.source:
        raise DimensionError(f"key emission expects source width {params.source}, got {h.shape}")
    M = params.config.M
    z = h @ params.W_m.value.T + params.b_m.value
    keys = MemoryKeys(np.tanh(z[..., :M]), fast_sigmoid(z[..., M : 2 * M]), np.tanh(z[..., 2 * M :]))
    return keys, KeyCache(params, h, keys)


def emit_keys_backward(cache, dk, de, da):
    """Accumulates W_m, b_m gradients; returns the gradient for the source vector."""
    p = cache.params
    keys = cache.keys
    M = p.config.M
    dz = np.empty(keys.k.shape[:-1] + (3 * M,))
    dz[..., :M] = dk * (1.0 - keys.k * keys.k)
    dz[..., M : 2 * M] = de * keys.e * (1.0 - keys.e)
    dz[..., 2 * M :] = da * (1.0 - keys.a * keys.a)
    dz2 = dz.reshape(-1, 3 * M)
    p.W_m.grad += dz2.T @ cache.src.reshape(-1, p.source)
    p.b_m.grad += dz2.sum(axis=0)
    return dz @ p.W_m.value


# -- alignment and attention ------------------------------------------------


class AddressCache:
    __slots__ = ("params", "mem", "key", "alpha", "dot", "nm", "nk", "den", "th")

    def __init__(self, params, mem, key, alpha):
        self.params = params
        self.mem = mem
        self.key = key
        self.alpha = alpha
        self.dot = self.nm = self.nk = self.den = self.th = None


def _cosine_scores(mem, key, cache):
    dot = (mem @ key[..., :, None])[..., 0]
    nm = np.sqrt(np.einsum("...km,...km->...k", mem, mem))
    nk = np.sqrt((key * key).sum(axis=-1))[..., None]
    den = np.maximum(nm * nk, COSINE_EPS)
    if cache is not None:
        cache.dot, cache.nm, cache.nk, cache.den = dot, nm, nk, den
    return dot / den


def _additive_scores(params, mem, key, cache):
    M = params.config.M
    Wa = params.W_a.value
    pre = mem @ Wa[:, :M].T + (key @ Wa[:, M:].T)[..., None, :]
    th = np.tanh(pre)
    if cache is not None:
        cache.th = th
    return th @ params.v.value


def align_scores(params, mem, key, cache=None):
    """Alignment of ``key`` with every memory row; shape ``(..., K)``."""
    if params.config.align == "cosine":
        return _cosine_scores(mem, key, cache)
    return _additive_scores(params, mem, key, cache)


def align_score(cfg, params, mem_row, key):
    """Scalar alignment of one memory row with a key.

    cosine: ``x.y / max(|x||y|, 1e-8)``, so a zero vector scores 0 and the score
    is exactly invariant to positive rescaling; additive: ``v^T tanh(W_a [x; y])``.
    """
    mem_row = np.asarray(mem_row, dtype=np.float64)
    key = np.asarray(key, dtype=np.float64)
    if mem_row.shape != (cfg.M,) or key.shape != (cfg.M,):
        raise DimensionError(f"align expects two vectors of length {cfg.M}, got {mem_row.shape}, {key.shape}")
    if cfg.align == "cosine":
        return float(mem_row @ key / max(np.linalg.norm(mem_row) * np.linalg.norm(key), COSINE_EPS))
    Wa = params.W_a.value
    return float(params.v.value @ np.tanh(Wa @ np.concatenate([mem_row, key])))


def address(params, mem, key):
    """Attention over segments: softmax of the K alignment scores."""
    cache = AddressCache(params, mem, key, None)
    s = align_scores(params, mem, key, cache)
    s = s - s.max(axis=-1, keepdims=True)
    ex = np.exp(s)
    alpha = ex / ex.sum(axis=-1, keepdims=True)
    cache.alpha = alpha
    return alpha, cache


def attention(cfg, params, mem, key):
    mem = np.asarray(mem, dtype=np.float64)
    key = np.asarray(key, dtype=np.float64)
    if mem.shape[-2:] != (cfg.K, cfg.M) or key.shape[-1] != cfg.M:
        raise DimensionError(f"attention expects mem[..,{cfg.K},{cfg.M}] and key[..,{cfg.M}]")
    alpha, _ = address(params, mem, key)
    return alpha


def address_backward(cache, dalpha):
    """Softmax and alignment reverse. Returns (dmem, dkey); accumulates align params."""
    alpha = cache.alpha
    ds = alpha * (dalpha - (alpha * dalpha).sum(axis=-1, keepdims=True))
    p = cache.params
    mem, key = cache.mem, cache.key
    if p.config.align == "cosine":
        den = cache.den
        ddot = ds / den
        # the floor is a constant, so no gradient reaches the norms below it
        dden = np.where(cache.nm * cache.nk > COSINE_EPS, -ds * cache.dot / (den * den), 0.0)
        nm, nk = cache.nm, cache.nk
        dnm = dden * nk
        dnk = (dden * nm).sum(axis=-1, keepdims=True)
        nm_safe = np.where(nm > 0, nm, 1.0)
        nk_safe = np.where(nk > 0, nk, 1.0)
        dmem = ddot[..., :, None] * key[..., None, :] + (dnm / nm_safe)[..., :, None] * mem
        dkey = (ddot[..., None, :] @ mem)[..., 0, :] + (dnk / nk_safe) * key
        return dmem, dkey
    M = p.config.M
    th = cache.th
    v = p.v.value
    Wa = p.W_a.value
    p.v.grad += (ds[..., :, None] * th).reshape(-1, M).sum(axis=0)
    dpre = ds[..., :, None] * v * (1.0 - th * th)
    dpre_key = dpre.sum(axis=-2)
    p.W_a.grad[:, :M] += dpre.reshape(-1, M).T @ mem.reshape(-1, M)
    p.W_a.grad[:, M:] += dpre_key.reshape(-1, M).T @ key.reshape(-1, M)
    dmem = dpre @ Wa[:, :M]
    dkey = dpre_key @ Wa[:, M:]
    return dmem, dkey


# -- read / write -------------------------------------------------------------


def _check_distribution(alpha, K):
    if alpha.shape[-1] != K:
        raise DimensionError(f"attention has {alpha.shape[-1]} entries, memory has {K} rows")
    if np.any(np.abs(alpha.sum(axis=-1) - 1.0) > 1e-9) or np.any(alpha < 0):
        raise ContractError("attention weights are not a probability distribution")


def read_raw(mem, alpha):
    return (alpha[..., None, :] @ mem)[..., 0, :]


def read(mem, alpha):
    """Convex combination of memory rows weighted by ``alpha``."""
    mem = np.asarray(mem, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_distribution(alpha, mem.shape[-2])
    return read_raw(mem, alpha)


def read_backward(mem, alpha, dr):
    """Returns (dmem, dalpha) for ``r = alpha^T mem``."""
    dalpha = (mem @ dr[..., :, None])[..., 0]
    dmem = alpha[..., :, None] * dr[..., None, :]
    return dmem, dalpha


def write_raw(mem, alpha, e, a):
    A = alpha[..., :, None]
    return mem * (1.0 - A * e[..., None, :]) + A * a[..., None, :]


def write(mem, alpha, keys):
    """Erase then add: ``M'[k,j] = M[k,j](1 - alpha_k e_j) + alpha_k a_j``."""
    mem = np.asarray(mem, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    _check_distribution(alpha, mem.shape[-2])
    if keys.e.shape[-1] != mem.shape[-1] or keys.a.shape[-1] != mem.shape[-1]:
        raise DimensionError(f"erase/add width does not match segment size {mem.shape[-1]}")
    return write_raw(mem, alpha, keys.e, keys.a)


def write_backward(mem, alpha, e, a, dnew):
    """Returns (dmem, dalpha, de, da) for :func:`write_raw`."""
    A = alpha[..., :, None]
    dmem = dnew * (1.0 - A * e[..., None, :])
    dm_mem = dnew * mem
    dalpha = (dnew @ a[..., :, None])[..., 0] - (dm_mem @ e[..., :, None])[..., 0]
    Ar = alpha[..., None, :]
    de = -(Ar @ dm_mem)[..., 0, :]
    da = (Ar @ dnew)[..., 0, :]
    return dmem, dalpha, de, da


@dataclass
class AccessCache:
    """Everything one read-then-write memory access needs for its reverse."""

    address: AddressCache
    keys: KeyCache = None
    write: bool = True


def memory_backward(cache, d_read, d_mem_out, d_keys=None):
    """Reverse of address -> read -> write for one step.

    ``d_read`` is the gradient on the read vector, ``d_mem_out`` the gradient
    on the memory after the write, ``d_keys`` an optional ``(dk, de, da)``
    arriving from elsewhere. Align parameters are accumulated; the returned
    dict holds gradients for ``mem`` (the step-entry memory), ``prev_key``,
    ``alpha`` and the emitted ``keys``.
    """
    if not isinstance(cache, AccessCache):
        raise ContractError("memory_backward needs an AccessCache")
    ac = cache.address
    mem, alpha = ac.mem, ac.alpha
    if d_read.shape[-1] != mem.shape[-1] or d_mem_out.shape != mem.shape:
        raise ContractError("upstream gradients do not match the cached memory shape")
    dk = np.zeros_like(d_read) if d_keys is None else d_keys[0]
    if cache.write and cache.keys is not None:
        keys = cache.keys.keys
        dmem, dalpha, de, da = write_backward(mem, alpha, keys.e, keys.a, d_mem_out)
        if d_keys is not None:
            de = de + d_keys[1]
            da = da + d_keys[2]
    else:
        dmem = d_mem_out.copy()
        dalpha = np.zeros_like(alpha)
        de = da = None
    dmem_r, dalpha_r = read_backward(mem, alpha, d_read)
    dmem += dmem_r
    dalpha += dalpha_r
    dmem_a, dkey = address_backward(ac, dalpha)
    dmem += dmem_a
    return {"mem": dmem, "prev_key": dkey, "alpha": dalpha, "keys": (dk, de, da)}
