import os
from collections import defaultdict

import numpy as np
import pytest

from melstm.data import (
    PAD_ID, UNK_ID, Corpus, DataError, SynthSpec, Vocabulary, load_corpus, load_embeddings, pad_batch, save_corpus,
    split, synth_tasks,
)
from melstm.numerics import Rng

HERE = os.path.dirname(__file__)
CORPUS8 = os.path.join(HERE, "fixtures", "corpus8.txt")
EMB3 = os.path.join(HERE, "fixtures", "emb3.txt")


def write(tmp_path, text, name="c.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_single_line_with_fresh_vocab(tmp_path):
    corpus, vocab = load_corpus(write(tmp_path, "1\tgreat movie\n"))
    assert corpus.examples == [(1, [2, 3])] and len(vocab) == 4


def test_unknown_token_maps_to_unk(tmp_path):
    vocab = Vocabulary(["great"])
    corpus, _ = load_corpus(write(tmp_path, "0\tgreat zebra\n"), vocab, extend=False)
    assert corpus.examples == [(0, [2, UNK_ID])] and "zebra" not in vocab


def test_fixture_corpus_ids():
    corpus, vocab = load_corpus(CORPUS8)
    assert vocab.tokens[:2] == ["<unk>", "<pad>"] and vocab.index["<unk>"] == UNK_ID and vocab.index["<pad>"] == PAD_ID
    assert [ids for _, ids in corpus.examples] == [
        [2, 3], [4, 3], [5, 2, 6], [7, 8], [9, 8, 10, 11], [2, 2, 2], [12, 5, 2, 3], [11],
    ]
    assert corpus.labels.tolist() == [1, 0, 1, 0, 2, 1, 0, 2] and corpus.num_classes == 3


def test_vocabulary_is_a_bijection():
    _, vocab = load_corpus(CORPUS8)
    _, vocab = load_corpus(CORPUS8, vocab, extend=True)
    assert len(set(vocab.tokens)) == len(vocab.tokens)
    assert all(vocab.index[t] == i for i, t in enumerate(vocab.tokens))


def test_round_trip(tmp_path):
    corpus, vocab = load_corpus(CORPUS8)
    out = str(tmp_path / "rt.txt")
    save_corpus(corpus, vocab, out)
    again, vocab2 = load_corpus(out, vocab, extend=False)
    assert again.examples == corpus.examples and vocab2 == vocab


@pytest.mark.parametrize("text,line", [("1\tok\nno tab here\n", 2), ("x\tbad label\n", 1), ("0\t   \n", 1),
                                       ("-1\tneg\n", 1)])
def test_malformed_lines_report_line_number(tmp_path, text, line):
    path = write(tmp_path, text)
    with pytest.raises(DataError) as err:
        load_corpus(path)
    assert err.value.line == line and f":{line}:" in str(err.value)


def test_empty_file_and_class_overflow(tmp_path):
    with pytest.raises(DataError, match="empty"):
        load_corpus(write(tmp_path, "\n\n"))
    with pytest.raises(DataError):
        load_corpus(write(tmp_path, "3\tx\n"), num_classes=2)


def test_max_length_truncates(tmp_path):
    corpus, _ = load_corpus(write(tmp_path, "0\ta b c d e\n"), max_length=3)
    assert len(corpus.examples[0][1]) == 3


def test_embeddings_fixture():
    _, vocab = load_corpus(CORPUS8)
    table = load_embeddings(EMB3, vocab, 2, rng=Rng(0))
    m = table.matrix
    assert m.shape == (len(vocab), 2)
    assert np.array_equal(m[vocab.index["great"]], [0.5, -0.25])
    assert np.array_equal(m[vocab.index["movie"]], [1.0, 2.0])
    others = [i for i in range(len(vocab)) if vocab.tokens[i] not in ("great", "movie")]
    assert np.all(np.abs(m[others]) <= 0.1)
    assert table.covered == 2 and table.coverage == pytest.approx(2 / len(vocab))
    assert np.array_equal(load_embeddings(EMB3, vocab, 2, rng=Rng(0)).matrix, m)


def test_embedding_dimension_mismatch():
    _, vocab = load_corpus(CORPUS8)
    with pytest.raises(DataError) as err:
        load_embeddings(EMB3, vocab, 3)
    assert err.value.line == 1


def numbered(n):
    return Corpus([(i % 2, [i + 2]) for i in range(n)], 2)


def ids_of(c):
    return sorted(s[0] for _, s in c.examples)


def test_split_fractions_sizes_and_partition():
    s = split(numbered(100), "fractions", seed=3)
    assert [len(s[k]) for k in ("train", "dev", "test")] == [70, 20, 10]
    assert sorted(ids_of(s["train"]) + ids_of(s["dev"]) + ids_of(s["test"])) == list(range(2, 102))
    assert ids_of(split(numbered(100), "fractions", seed=3)["dev"]) == ids_of(s["dev"])


def test_ten_fold_on_ten_examples():
    folds = split(numbered(10), "cv", seed=0)
    assert len(folds) == 10 and all(len(f["test"]) == 1 for f in folds)
    assert sorted(i for f in folds for i in ids_of(f["test"])) == list(range(2, 12))


def test_cv_partition_and_balance():
    folds = split(numbered(57), "10-fold", seed=1)
    sizes = [len(f["test"]) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    tests = [i for f in folds for i in ids_of(f["test"])]
    assert sorted(tests) == list(range(2, 59))
    for f in folds:
        assert not set(ids_of(f["train"])) & set(ids_of(f["test"]))
        assert len(f["train"]) + len(f["test"]) == 57


def test_split_errors():
    with pytest.raises(DataError):
        split(numbered(9), "cv")
    with pytest.raises(ValueError):
        split(numbered(9), "bootstrap")
    assert split(numbered(9))["train"].examples == numbered(9).examples


def test_pad_batch():
    ids, mask = pad_batch([[5, 6, 7], [8]])
    assert ids.tolist() == [[5, 6, 7], [8, PAD_ID, PAD_ID]]
    assert mask.tolist() == [[True, True, True], [True, False, False]]


def test_synth_determinism_and_validation():
    a, va = synth_tasks(SynthSpec(size=50, seed=3))
    b, vb = synth_tasks(SynthSpec(size=50, seed=3))
    assert [c.examples for c in a] == [c.examples for c in b] and va == vb
    for bad in (SynthSpec(patterns=0), SynthSpec(strength=1.5), SynthSpec(tasks=0), SynthSpec(vocab_size=10),
                SynthSpec(length=(0, 3))):
        with pytest.raises(ValueError):
            synth_tasks(bad)


def test_synth_examples_carry_a_label_cue():
    corpora, vocab = synth_tasks(SynthSpec(size=200, seed=1))
    for c in corpora:
        for y, ids in c.examples:
            cues = [vocab.tokens[i] for i in ids if i in c.informative]
            assert len(cues) == 1 and cues[0].split("_")[0].endswith("pos" if y else "neg")


def bow_transfer(strength, seed=0):
    """Train a bag-of-words log-odds classifier on task 0, score it on task 1."""
    corpora, _ = synth_tasks(SynthSpec(tasks=2, strength=strength, size=700, seed=seed))
    counts = defaultdict(lambda: [1.0, 1.0])
    for y, ids in corpora[0].examples:
        for t in set(ids):
            counts[t][y] += 1
    hits = 0
    for y, ids in corpora[1].examples:
        score = sum(np.log(counts[t][1] / counts[t][0]) for t in ids if t in counts)
        hits += int((score > 0) == bool(y))
    return hits / len(corpora[1])


def test_synth_shared_patterns_transfer():
    assert bow_transfer(1.0) > 0.8


def test_synth_zero_strength_tasks_are_independent():
    assert abs(bow_transfer(0.0) - 0.5) < 0.06
