"""Per-timestep introspection traces written as JSON lines.

One record per example::

    {"example_id": 0, "tokens": [...], "probs": [[...], ...],
     "gate": [[...], ...], "alpha": [[...], ...]}

``probs[t]`` is the task head applied to ``h_t`` (prefix scoring). For arc2,
``gate`` and ``alpha`` describe the task's local memory and the extra keys
``gate_shared``/``alpha_shared`` the global one. A vanilla LSTM has no gate,
so its ``gate`` and ``alpha`` rows are empty.
"""

import json

import numpy as np

from .multitask import step_outputs


def _rows(arrs):
    return [[float(v) for v in np.ravel(a)] for a in arrs]


def trace_record(model, task, example_id, ids, tokens):
    steps = step_outputs(model, task, ids)
    rec = {
        "example_id": example_id,
        "tokens": list(tokens),
        "probs": _rows(s["probs"] for s in steps),
        "gate": _rows(s["gate"] for s in steps),
    }
    if model.kind == "arc2":
        rec["gate_shared"] = _rows(s["gate_shared"] for s in steps)
    rec["alpha"] = _rows(s["alpha"] for s in steps)
    if model.kind == "arc2":
        rec["alpha_shared"] = _rows(s["alpha_shared"] for s in steps)
    return rec


def read_inputs(path):
    """Token lists from a corpus file (``label<TAB>text``) or plain text lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            text = line.split("\t", 1)[1] if "\t" in line else line
            toks = text.split()
            if toks:
                out.append(toks)
    return out


def trace_sequences(model, task, vocab, sequences):
    """Yield one record per token list; unknown tokens map to ``<unk>``."""
    for i, toks in enumerate(sequences):
        ids = [vocab.get(t) for t in toks]
        yield trace_record(model, task, i, ids, toks)


def dumps(record):
    return json.dumps(record, separators=(",", ":"))


def write(path, records):
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
            n += 1
    return n


def gate_separation(model, task, corpus):
    """Mean gate activation at informative vs other tokens over a corpus.

    Returns ``(mean_informative, mean_filler)``; gates are averaged over
    hidden units first, then over token occurrences.
    """
    info, filler = [], []
    for _, ids in corpus.examples:
        for tok, step in zip(ids, step_outputs(model, task, ids)):
            (info if tok in corpus.informative else filler).append(float(np.mean(step["gate"])))
    return float(np.mean(info)), float(np.mean(filler))
