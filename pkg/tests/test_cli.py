import json
import os

import numpy as np
import pytest

from melstm import bench, checkpoint, cli, config, trace
from melstm.data import Vocabulary
from melstm.gradcheck import make_instance
from melstm.multitask import ConfigError

HERE = os.path.dirname(__file__)
CORPUS8 = os.path.join(HERE, "fixtures", "corpus8.txt")
ROOT = os.path.dirname(HERE)


def run_config(tmp_path, kind="arc1", epochs=2, **extra):
    doc = {
        "architecture": {"kind": kind, "hidden": 6, "embed_dim": 5, "memory": {"K": 3, "M": 4}},
        "train": {"learning_rate": 0.05, "epochs": epochs, "batch_size": 4},
        "tasks": [{"name": "a", "train": CORPUS8, "test": CORPUS8}, {"name": "b", "train": CORPUS8}],
        "output_dir": str(tmp_path / "run"),
        "seed": 3,
    }
    doc.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return str(path)


def test_shipped_configs_carry_table_two_values():
    movie = config.load(os.path.join(ROOT, "configs", "movie.json"), check_paths=False)
    product = config.load(os.path.join(ROOT, "configs", "product.json"), check_paths=False)
    for cfg in (movie, product):
        a = cfg.architecture
        assert (a["hidden"], a["embed_dim"], a["memory"]["K"], a["memory"]["M"]) == (100, 100, 50, 20)
        assert cfg.train.batch_size == 16
    assert (movie.train.learning_rate, movie.train.l2) == (0.01, 0.0)
    assert (product.train.learning_rate, product.train.l2) == (0.1, 1e-5)


def test_config_errors_name_fields(tmp_path):
    doc = {"architecture": {"kind": "arc9", "hidden": 0}, "tasks": [{"name": "a", "train": "missing.txt"},
                                                                   {"name": "a", "train": CORPUS8, "split": "x"}],
           "bogus": 1}
    with pytest.raises(ConfigError) as err:
        config.parse(doc, str(tmp_path))
    msg = str(err.value)
    for field in ("architecture.kind", "architecture.hidden", "tasks[0].train", "tasks[1].name", "tasks[1].split",
                  "bogus"):
        assert field in msg
    with pytest.raises(ConfigError, match="tasks"):
        config.parse({}, ".")


def test_missing_data_path_exits_2(tmp_path, capsys):
    cfg = run_config(tmp_path, tasks=[{"name": "a", "train": "nope.txt"}, {"name": "b", "train": CORPUS8}])
    assert cli.main(["train", "--config", cfg]) == 2
    assert "tasks[0].train" in capsys.readouterr().err
    assert cli.main(["train"]) == 2


def test_train_twice_gives_identical_artifacts(tmp_path):
    cfg = run_config(tmp_path)
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 0
    for name in ("metrics.jsonl", "model.ckpt"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    lines = [json.loads(l) for l in (outs[0] / "metrics.jsonl").read_text().splitlines()]
    assert all(list(r) == ["epoch", "task", "split", "loss", "accuracy", "wall_ms"] for r in lines)
    assert [(r["epoch"], r["task"], r["split"]) for r in lines] == [
        (1, "a", "train"), (1, "b", "train"), (2, "a", "train"), (2, "b", "train"), (2, "a", "test")]


def test_seed_flag_changes_run(tmp_path):
    cfg = run_config(tmp_path)
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "s1"), "--seed", "1"])
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "s2"), "--seed", "2"])
    assert (tmp_path / "s1" / "metrics.jsonl").read_bytes() != (tmp_path / "s2" / "metrics.jsonl").read_bytes()


def test_fractions_and_cv_splits(tmp_path):
    big = tmp_path / "big.txt"
    big.write_text("".join(f"{i % 2}\tw{i % 7} {'good' if i % 2 else 'bad'} w{i % 5}\n" for i in range(40)))
    tasks = [{"name": "a", "train": str(big), "split": "fractions"}, {"name": "b", "train": str(big), "split": "cv"}]
    cfg = run_config(tmp_path, kind="single-lstm", epochs=1, tasks=tasks)
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "cv")]) == 0
    assert sorted(os.listdir(tmp_path / "cv")) == [f"fold{k}" for k in range(10)]


def test_synth_config_runs(tmp_path):
    cfg = run_config(tmp_path, epochs=1, tasks=None, synth={"tasks": 2, "size": 40, "train": 30})
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "syn")]) == 0
    recs = [json.loads(l) for l in (tmp_path / "syn" / "metrics.jsonl").read_text().splitlines()]
    assert {r["split"] for r in recs} == {"train", "test"}


def test_eval_matches_training_model(tmp_path, capsys):
    cfg = run_config(tmp_path)
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "r")])
    capsys.readouterr()
    assert cli.main(["eval", str(tmp_path / "r" / "model.ckpt"), CORPUS8, "--task", "0"]) == 0
    out = json.loads(capsys.readouterr().out)
    test_line = [json.loads(l) for l in (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()][-1]
    assert out["accuracy"] == test_line["accuracy"] and out["total"] == 8
    assert cli.main(["eval", str(tmp_path / "r" / "model.ckpt"), CORPUS8, "--task", "7"]) == 2


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--kind", "single-lstm"]) == 0
    assert "max relative error" in capsys.readouterr().out
    assert cli.main(["gradcheck", "--K", "9"]) == 2


def test_synth_command(tmp_path):
    out = tmp_path / "syn"
    assert cli.main(["synth", "--size", "20", "--out", str(out), "--seed", "4"]) == 0
    assert sorted(os.listdir(out)) == ["informative.json", "task0.txt", "task1.txt"]
    info = json.loads((out / "informative.json").read_text())
    assert len(info["task0"]) == 400
    assert cli.main(["synth", "--patterns", "0", "--out", str(out)]) == 2


def _trace_file(tmp_path, kind):
    mdl, _ = make_instance(kind, vocab=6)
    vocab = Vocabulary(["good", "bad", "plot", "fine"])
    ck = tmp_path / f"{kind}.ckpt"
    checkpoint.save(ck, mdl, vocab)
    inp = tmp_path / "in.txt"
    inp.write_text("1\tgood plot\nfine\nunseen good bad bad fine\n")
    return ck, inp


@pytest.mark.parametrize("kind", ["single-lstm", "single-me-lstm", "arc1", "arc2"])
def test_trace_command(tmp_path, kind):
    ck, inp = _trace_file(tmp_path, kind)
    outs = [tmp_path / "t1.jsonl", tmp_path / "t2.jsonl"]
    for out in outs:
        assert cli.main(["trace", str(ck), str(inp), "--out", str(out)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()
    recs = [json.loads(l) for l in outs[0].read_text().splitlines()]
    assert [r["example_id"] for r in recs] == [0, 1, 2]
    assert recs[1]["tokens"] == ["fine"]
    keys = ["example_id", "tokens", "probs", "gate"] + (["gate_shared"] if kind == "arc2" else []) + ["alpha"]
    for r in recs:
        assert list(r)[: len(keys)] == keys
        T = len(r["tokens"])
        assert len(r["probs"]) == len(r["gate"]) == len(r["alpha"]) == T
        for p in r["probs"]:
            assert abs(sum(p) - 1) < 1e-9
        for g in r["gate"] + r.get("gate_shared", []):
            assert all(0 < v < 1 for v in g)
        if kind != "single-lstm":
            assert all(len(g) == 4 for g in r["gate"])


def test_trace_of_zero_fusion_checkpoint_matches_lstm(tmp_path):
    from melstm.multitask import ArchitectureConfig, build
    from melstm.memory import MemoryConfig
    from melstm.numerics import Rng

    me = build(ArchitectureConfig("single-me-lstm", [2], 8, 3, 4, MemoryConfig(3, 4)), Rng(0))
    me.tasks[0].encoder.fusion.W_f.value[...] = 0
    plain = build(ArchitectureConfig("single-lstm", [2], 8, 3, 4), Rng(1))
    t_me, t_pl = me.tasks[0], plain.tasks[0]
    t_pl.embedding.value[...] = t_me.embedding.value
    t_pl.encoder.W_p.value[...] = t_me.encoder.cell.W_p.value
    t_pl.encoder.b_p.value[...] = t_me.encoder.cell.b_p.value
    t_pl.head.W.value[...] = t_me.head.W.value
    t_pl.head.b.value[...] = t_me.head.b.value
    vocab = Vocabulary(["a", "b", "c", "d", "e", "f"])
    seqs = [["a", "b", "c"], ["f", "e"]]
    r_me = list(trace.trace_sequences(me, 0, vocab, seqs))
    r_pl = list(trace.trace_sequences(plain, 0, vocab, seqs))
    for a, b in zip(r_me, r_pl):
        assert np.max(np.abs(np.array(a["probs"]) - np.array(b["probs"]))) <= 1e-12


def test_trace_rejects_incompatible_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"MELSTMCK" + b"\x02\x00\x00\x00\x00\x00\x00\x00{}")
    inp = tmp_path / "in.txt"
    inp.write_text("a b\n")
    assert cli.main(["trace", str(bad), str(inp)]) == 1
    assert "version" in capsys.readouterr().err


def test_one_token_trace(tmp_path):
    ck, _ = _trace_file(tmp_path, "single-me-lstm")
    ckpt = checkpoint.load(ck)
    (rec,) = trace.trace_sequences(ckpt.model, 0, ckpt.vocab, [["good"]])
    assert len(rec["probs"]) == 1 and abs(sum(rec["probs"][0]) - 1) < 1e-12
    assert len(rec["gate"][0]) == 4 and all(0 < g < 1 for g in rec["gate"][0])


def test_bench_report_contains_all_kinds(tmp_path):
    setup = bench.BenchSetup(hidden=4, embed_dim=3, K=3, M=4, examples=8, repeats=2, warmup=1)
    report = bench.run(setup)
    assert set(report["kinds"]) == {"single-lstm", "single-me-lstm", "arc1", "arc2"}
    for e in report["kinds"].values():
        assert len(e["epoch_seconds"]) == 2 and e["median"] > 0
    assert report["kinds"]["single-lstm"]["ratio_to_lstm"] == 1.0
    out = tmp_path / "bench.json"
    assert cli.main(["bench", "--examples", "4", "--repeats", "1", "--kinds", "single-lstm", "arc1",
                     "--out", str(out)]) == 0
    assert set(json.loads(out.read_text())["kinds"]) == {"single-lstm", "arc1"}
