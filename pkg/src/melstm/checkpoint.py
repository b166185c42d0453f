"""Binary checkpoint container.

Layout::

    MAGIC (8 bytes) | header length (uint64, little endian) | JSON header | payload

The header is canonical JSON (sorted keys, compact separators) holding the
format version, architecture config, vocabulary tokens and digest, optimizer
step count, RNG state and a table of tensors with their shapes and byte
offsets. The payload is the concatenation of every parameter tensor followed
by every Adagrad accumulator, little-endian float64 in C order. Identical
model state therefore always serializes to identical bytes.
"""

import json
import struct

import numpy as np

from .data import Vocabulary
from .multitask import ArchitectureConfig, build
from .numerics import Rng

MAGIC = b"MELSTMCK"
VERSION = 1
GATE_ORDER = ["candidate", "output", "input", "forget"]
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint."""


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def encode(model, vocab=None, step=0, rng_state=None, extra=None):
    """Serialize a model to bytes."""
    tensors = []
    chunks = []
    offset = 0
    slots = model.named_slots()
    for kind in ("value", "accum"):
        for name, slot in slots.items():
            arr = np.ascontiguousarray(getattr(slot, kind), dtype=_F64)
            raw = arr.tobytes(order="C")
            tensors.append({"name": name, "part": kind, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            chunks.append(raw)
            offset += len(raw)
    header = {
        "version": VERSION,
        "gate_order": GATE_ORDER,
        "config": model.config.to_dict(),
        "global_write": bool(model.global_write),
        "vocab": None if vocab is None else vocab.tokens,
        "vocab_sha256": None if vocab is None else vocab.digest(),
        "step": int(step),
        "rng": rng_state,
        "extra": extra or {},
        "tensors": tensors,
    }
    head = _canonical(header)
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def save(path, model, vocab=None, step=0, rng_state=None, extra=None):
    blob = encode(model, vocab, step, rng_state, extra)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


class Checkpoint:
    """A decoded checkpoint: the rebuilt model plus its bookkeeping."""

    def __init__(self, model, vocab, step, rng_state, extra):
        self.model = model
        self.vocab = vocab
        self.step = step
        self.rng_state = rng_state
        self.extra = extra

    def rng(self):
        return None if self.rng_state is None else Rng.from_state(self.rng_state)


def decode(blob):
    if len(blob) < 16 or blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (n,) = struct.unpack("<Q", blob[8:16])
    try:
        header = json.loads(blob[16 : 16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    version = header.get("version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version!r}; this build reads version {VERSION}")
    if header.get("gate_order") != GATE_ORDER:
        raise CheckpointError(f"checkpoint gate order {header.get('gate_order')} differs from {GATE_ORDER}")
    payload = memoryview(blob)[16 + n :]
    config = ArchitectureConfig.from_dict(header["config"])
    model = build(config, Rng(0))
    model.global_write = header.get("global_write", True)
    slots = model.named_slots()
    listed = {(t["name"], t["part"]) for t in header["tensors"]}
    expected = {(k, p) for k in slots for p in ("value", "accum")}
    if listed != expected:
        missing = sorted(expected - listed)[:3]
        unknown = sorted(listed - expected)[:3]
        raise CheckpointError(f"tensor table does not match the architecture (missing {missing}, unknown {unknown})")
    for t in header["tensors"]:
        slot = slots[t["name"]]
        if tuple(t["shape"]) != slot.shape:
            raise CheckpointError(f"{t['name']}: stored shape {t['shape']} but architecture expects {list(slot.shape)}")
        end = t["offset"] + t["nbytes"]
        if end > len(payload):
            raise CheckpointError("checkpoint payload is truncated")
        arr = np.frombuffer(payload[t["offset"] : end], dtype=_F64).reshape(t["shape"])
        getattr(slot, t["part"])[...] = arr
    vocab = None
    if header.get("vocab") is not None:
        vocab = Vocabulary()
        vocab.tokens = list(header["vocab"])
        vocab.index = {tok: i for i, tok in enumerate(vocab.tokens)}
        if vocab.digest() != header.get("vocab_sha256"):
            raise CheckpointError("vocabulary digest mismatch")
    return Checkpoint(model, vocab, header.get("step", 0), header.get("rng"), header.get("extra", {}))


def load(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return decode(blob)
