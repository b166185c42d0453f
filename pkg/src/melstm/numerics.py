"""Dense numerics shared by every model component.

Matrices are float64 numpy arrays in C (row-major) order. Randomness comes
from a Philox counter-based generator so that a seed produces the same draws
on every platform numpy supports.
"""

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """A NaN or infinite value appeared where a finite one is required."""


class ContractError(RuntimeError):
    """A caller broke an operation's precondition (stale cache, bad distribution)."""


class Rng:
    """Seeded Philox stream.

    Philox is counter-based, so the draw sequence for a given seed is fixed by
    the algorithm rather than by the platform. The full state can be captured
    with :meth:`get_state` and restored with :meth:`set_state`.
    """

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, low, high, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def choice(self, a, size=None, replace=True, p=None):
        return self._gen.choice(a, size=size, replace=replace, p=p)

    def spawn(self, key):
        """Independent child stream derived from this seed and an integer key."""
        return Rng(np.random.SeedSequence([self.seed, int(key)]).generate_state(1, np.uint64)[0])

    def get_state(self):
        state = self._gen.bit_generator.state
        return {
            "seed": self.seed,
            "counter": [int(v) for v in state["state"]["counter"]],
            "key": [int(v) for v in state["state"]["key"]],
            "buffer": [int(v) for v in state["buffer"]],
            "buffer_pos": int(state["buffer_pos"]),
            "has_uint32": int(state["has_uint32"]),
            "uinteger": int(state["uinteger"]),
        }

    def set_state(self, saved):
        self.seed = int(saved["seed"])
        bg = np.random.Philox(self.seed)
        bg.state = {
            "bit_generator": "Philox",
            "state": {
                "counter": np.array(saved["counter"], dtype=np.uint64),
                "key": np.array(saved["key"], dtype=np.uint64),
            },
            "buffer": np.array(saved["buffer"], dtype=np.uint64),
            "buffer_pos": saved["buffer_pos"],
            "has_uint32": saved["has_uint32"],
            "uinteger": saved["uinteger"],
        }
        self._gen = np.random.Generator(bg)

    @classmethod
    def from_state(cls, saved):
        rng = cls(saved["seed"])
        rng.set_state(saved)
        return rng


class GradSlot:
    """A trainable tensor with its gradient and Adagrad accumulator."""

    __slots__ = ("value", "grad", "accum")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)
        self.accum = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"GradSlot(shape={self.value.shape})"


def _shape(a):
    return "x".join(str(s) for s in np.shape(a)) or "scalar"


def matmul(a, b):
    """Matrix product with a shape check that names both operands."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {_shape(a)} by {_shape(b)}")
    return a @ b


def sigmoid(x):
    # exp of a non-positive argument only, so neither branch overflows
    x = np.asarray(x, dtype=DTYPE)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def fast_sigmoid(x):
    """Sigmoid for the hot loop; 0.5*(1+tanh(x/2)) never overflows."""
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}
_UNARY = {"tanh": np.tanh, "sigmoid": sigmoid}


def elementwise(op, a, b=None):
    """Apply ``op`` (add, sub, mul, tanh, sigmoid) entrywise."""
    a = np.asarray(a, dtype=DTYPE)
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} takes a single operand")
        return _UNARY[op](a)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    b = np.asarray(b, dtype=DTYPE)
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {_shape(a)} does not match {_shape(b)}")
    return _BINARY[op](a, b)


def init_uniform(rng, rows, cols, half_width=0.1):
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    return rng.uniform(-half_width, half_width, size=(rows, cols))


def softmax(scores, axis=-1):
    """Max-shifted softmax along ``axis``."""
    scores = np.asarray(scores, dtype=DTYPE)
    if scores.size == 0:
        raise ValueError("softmax of an empty vector")
    if np.isnan(scores).any():
        raise NumericError("softmax input contains NaN")
    shifted = scores - scores.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def relative_error(a, b, floor=1e-8):
    """Elementwise |a-b| / max(|a|, |b|, floor)."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def finite_diff_grad(f, params, epsilon=1e-5):
    """Central-difference gradient of a scalar function.

    ``params`` maps names to float64 arrays which are perturbed in place, one
    coordinate at a time, and restored afterwards. ``f`` is called with no
    arguments and must read the arrays it depends on.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr, dtype=DTYPE)
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"parameter {name} is not contiguous")
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = f()
            flat[i] = orig - epsilon
            fm = f()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = [int(j) for j in np.unravel_index(i, arr.shape)]
                raise NumericError(f"non-finite objective at {name}{idx}")
            gflat[i] = (fp - fm) / (2.0 * epsilon)
        grads[name] = g
    return grads
