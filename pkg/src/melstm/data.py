"""Corpora, vocabularies, pretrained embeddings, splits and synthetic related tasks.

Corpus files are UTF-8, one example per line: ``label<TAB>space separated tokens``
with 0-based integer labels. Embedding files hold ``token v1 ... vdim`` per line.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng

UNK = "<unk>"
PAD = "<pad>"
UNK_ID = 0
PAD_ID = 1


class DataError(ValueError):
    """Malformed or unusable input data."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


class Vocabulary:
    """Token <-> id bijection with ``<unk>`` at 0 and ``<pad>`` at 1."""

    def __init__(self, tokens=None):
        self.tokens = [UNK, PAD]
        self.index = {UNK: UNK_ID, PAD: PAD_ID}
        for tok in tokens or ():
            self.add(tok)

    def add(self, token):
        idx = self.index.get(token)
        if idx is None:
            idx = len(self.tokens)
            self.tokens.append(token)
            self.index[token] = idx
        return idx

    def get(self, token):
        return self.index.get(token, UNK_ID)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def digest(self):
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


@dataclass
class Corpus:
    examples: list  # (label, [token ids])
    num_classes: int
    name: str = ""
    informative: frozenset = field(default_factory=frozenset)

    def __len__(self):
        return len(self.examples)

    @property
    def labels(self):
        return np.array([y for y, _ in self.examples], dtype=np.int64)

    def subset(self, indices, name=None):
        return Corpus([self.examples[i] for i in indices], self.num_classes, name or self.name, self.informative)


@dataclass
class EmbeddingTable:
    matrix: np.ndarray
    covered: int

    @property
    def coverage(self):
        return self.covered / self.matrix.shape[0]


def _parse_line(raw, path, lineno):
    line = raw.rstrip("\n").rstrip("\r")
    if "\t" not in line:
        raise DataError("expected 'label<TAB>text'", path, lineno)
    label, text = line.split("\t", 1)
    try:
        y = int(label)
    except ValueError:
        raise DataError(f"label {label!r} is not an integer", path, lineno) from None
    if y < 0:
        raise DataError(f"negative label {y}", path, lineno)
    tokens = text.split()
    if not tokens:
        raise DataError("example has no tokens", path, lineno)
    return y, tokens


def load_corpus(path, vocab=None, extend=None, max_length=None, name=None, num_classes=None):
    """Read a corpus file, mapping tokens to ids.

    A fresh vocabulary is created (and extended) when ``vocab`` is None. With
    a given vocabulary, new tokens are added only when ``extend`` is true;
    otherwise they map to ``<unk>``. ``max_length`` keeps the leading tokens.
    Returns ``(corpus, vocab)``.
    """
    if vocab is None:
        vocab = Vocabulary()
        extend = True if extend is None else extend
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            if not raw.strip():
                continue
            y, tokens = _parse_line(raw, path, lineno)
            if max_length is not None:
                tokens = tokens[:max_length]
            ids = [vocab.add(t) if extend else vocab.get(t) for t in tokens]
            examples.append((y, ids))
    if not examples:
        raise DataError("corpus is empty", path)
    top = max(y for y, _ in examples) + 1
    if num_classes is None:
        num_classes = max(2, top)
    elif top > num_classes:
        raise DataError(f"label {top - 1} exceeds {num_classes} classes", path)
    return Corpus(examples, num_classes, name or str(path)), vocab


def save_corpus(corpus, vocab, path):
    with open(path, "w", encoding="utf-8") as fh:
        for y, ids in corpus.examples:
            fh.write(f"{y}\t{' '.join(vocab.tokens[i] for i in ids)}\n")


def load_embeddings(path, vocab, dim, rng=None, half_width=0.1):
    """Build a ``len(vocab) x dim`` table; covered rows are copied from the file."""
    rng = rng or Rng(0)
    table = rng.uniform(-half_width, half_width, size=(len(vocab), dim))
    seen = np.zeros(len(vocab), dtype=bool)
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.rstrip("\n").split(" ")
            if not parts or parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(f"expected {dim} values for {token!r}, got {len(values)}", path, lineno)
            idx = vocab.index.get(token)
            if idx is None:
                continue
            try:
                table[idx] = [float(v) for v in values]
            except ValueError:
                raise DataError(f"non-numeric value for {token!r}", path, lineno) from None
            seen[idx] = True
    return EmbeddingTable(table, int(seen.sum()))


def split(corpus, scheme="fixed", seed=0, fractions=(0.7, 0.2, 0.1), folds=10):
    """Partition a corpus.

    ``fixed`` returns ``{"train": corpus}``; ``fractions`` returns
    train/dev/test corpora; ``cv`` returns a list of ``folds`` dicts with
    ``train`` and ``test``, fold sizes differing by at most one.
    """
    n = len(corpus)
    if scheme == "fixed":
        return {"train": corpus}
    order = Rng(seed).permutation(n)
    if scheme == "fractions":
        if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
            raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
        n_dev = int(np.floor(n * fractions[1] + 1e-9))
        n_test = int(np.floor(n * fractions[2] + 1e-9))
        n_train = n - n_dev - n_test
        if min(n_train, n_dev, n_test) < 1:
            raise DataError(f"{n} examples are too few for a train/dev/test split")
        return {
            "train": corpus.subset(order[:n_train]),
            "dev": corpus.subset(order[n_train : n_train + n_dev]),
            "test": corpus.subset(order[n_train + n_dev :]),
        }
    if scheme in ("cv", "10-fold"):
        if n < folds:
            raise DataError(f"{n} examples cannot form {folds} folds")
        parts = np.array_split(order, folds)
        out = []
        for k, test_idx in enumerate(parts):
            train_idx = np.concatenate([p for j, p in enumerate(parts) if j != k])
            out.append({"train": corpus.subset(train_idx), "test": corpus.subset(test_idx)})
        return out
    raise ValueError(f"unknown split scheme {scheme!r}")


def pad_batch(seqs, pad_id=PAD_ID):
    """Right-pad id sequences; returns ``(ids, mask)`` arrays."""
    T = max(len(s) for s in seqs)
    ids = np.full((len(seqs), T), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), T), dtype=bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = True
    return ids, mask


# -- synthetic related tasks ---------------------------------------------------


@dataclass
class SynthSpec:
    """Parameters of the related-task generator.

    Each task is binary. Every example carries ``cues`` cue tokens whose
    polarity equals the label, embedded in filler. Each cue is taken from the
    pool shared by all tasks with probability ``strength`` and from the
    task's private pool otherwise. Pools hold ``patterns`` tokens per
    polarity. ``label_noise`` flips that fraction of labels.
    """

    tasks: int = 2
    strength: float = 0.8
    vocab_size: int = 800
    length: tuple = (8, 16)
    size: int = 700
    seed: int = 0
    patterns: int = 100
    cues: int = 1
    label_noise: float = 0.0

    def validate(self):
        if self.tasks < 1:
            raise ValueError("synth needs at least one task")
        if self.patterns < 1:
            raise ValueError("synth needs at least one pattern per polarity")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must lie in [0, 1]")
        lo, hi = self.length
        if lo < 1 or hi < lo or self.cues < 1 or self.cues > lo:
            raise ValueError(f"bad length range {self.length} for {self.cues} cues")
        n_cue = 2 * self.patterns * (self.tasks + 1)
        if self.vocab_size < n_cue + 1:
            raise ValueError(f"vocab_size {self.vocab_size} leaves no room for filler after {n_cue} cue tokens")
        if self.size < 1:
            raise ValueError("size must be positive")


def synth_tasks(spec):
    """Generate ``spec.tasks`` related binary corpora over one shared vocabulary.

    Returns ``(corpora, vocab)``; each corpus lists its cue token ids in
    ``informative``.
    """
    spec.validate()
    rng = Rng(spec.seed)
    vocab = Vocabulary()
    P = spec.patterns

    def pool(tag):
        return [[vocab.add(f"{tag}{pol}_{j}") for j in range(P)] for pol in ("neg", "pos")]

    shared = pool("s")
    private = [pool(f"t{m}") for m in range(spec.tasks)]
    n_filler = spec.vocab_size - (len(vocab) - 2)
    filler = np.array([vocab.add(f"w{j}") for j in range(n_filler)])
    lo, hi = spec.length
    corpora = []
    for m in range(spec.tasks):
        informative = frozenset(shared[0] + shared[1] + private[m][0] + private[m][1])
        examples = []
        for _ in range(spec.size):
            y = int(rng.integers(0, 2))
            L = int(rng.integers(lo, hi + 1))
            seq = filler[rng.integers(0, len(filler), size=L)].tolist()
            positions = rng.choice(L, size=spec.cues, replace=False)
            for pos in positions:
                src = shared if rng.random() < spec.strength else private[m]
                seq[int(pos)] = src[y][int(rng.integers(0, P))]
            if spec.label_noise and rng.random() < spec.label_noise:
                y = 1 - y
            examples.append((y, seq))
        corpora.append(Corpus(examples, 2, f"task{m}", informative))
    return corpora, vocab
