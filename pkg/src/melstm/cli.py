"""Command-line entry point: ``melstm {train,eval,gradcheck,trace,bench,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import checkpoint, gradcheck, trace
from . import config as config_mod
from .data import Corpus, DataError, load_corpus, load_embeddings, save_corpus, split, synth_tasks, SynthSpec, Vocabulary
from .multitask import KINDS, ArchitectureConfig, ConfigError, build
from .numerics import Rng
from .training import TaskBundle, TrainingDiverged, evaluate, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _jsonl(rec):
    return json.dumps(rec, separators=(",", ":"))


# -- data assembly -------------------------------------------------------------


def _load_tasks(cfg):
    """Corpora for every task over one vocabulary, in config order.

    Returns ``(vocab, raw)`` where ``raw[i]`` maps ``train``/``dev``/``test`` to
    a Corpus or None.
    """
    if cfg.synth is not None:
        spec = cfg.synth_spec()
        corpora, vocab = synth_tasks(spec)
        n = cfg.synth_train_size()
        raw = [{"train": c.subset(range(n)), "dev": None, "test": c.subset(range(n, len(c)))} for c in corpora]
        return vocab, raw, [1.0] * len(raw), [f"task{m}" for m in range(len(raw))]
    vocab = Vocabulary()
    raw = []
    for t in cfg.tasks:
        parts = {}
        train_c, vocab = load_corpus(t.train, vocab, extend=True, max_length=cfg.max_length, name=t.name,
                                     num_classes=t.classes)
        parts["train"] = train_c
        C = train_c.num_classes
        for key in ("dev", "test"):
            path = getattr(t, key)
            if path is None:
                parts[key] = None
                continue
            c, vocab = load_corpus(path, vocab, extend=True, max_length=cfg.max_length, name=t.name,
                                   num_classes=t.classes)
            C = max(C, c.num_classes)
            parts[key] = c
        for c in parts.values():
            if c is not None:
                c.num_classes = C
        raw.append(parts)
    return vocab, raw, [t.weight for t in cfg.tasks], [t.name for t in cfg.tasks]


def _fold_plans(cfg, raw):
    """One list of (train, dev, test) per run; cross-validated tasks produce one run per fold."""
    schemes = [t.split for t in cfg.tasks] if cfg.synth is None else ["fixed"] * len(raw)
    folds = {}
    fixed = []
    for i, (parts, scheme) in enumerate(zip(raw, schemes)):
        if scheme == "fractions":
            s = split(parts["train"], "fractions", seed=cfg.seed)
            fixed.append((s["train"], s["dev"], s["test"]))
        elif scheme == "cv":
            folds[i] = split(parts["train"], "cv", seed=cfg.seed)
            fixed.append(None)
        else:
            fixed.append((parts["train"], parts["dev"], parts["test"]))
    if not folds:
        return [fixed]
    n = len(next(iter(folds.values())))
    plans = []
    for k in range(n):
        plan = list(fixed)
        for i, fs in folds.items():
            plan[i] = (fs[k]["train"], None, fs[k]["test"])
        plans.append(plan)
    return plans


def _arch(cfg, vocab, plan):
    a = dict(cfg.architecture)
    classes = [tr.num_classes for tr, _, _ in plan]
    return ArchitectureConfig(a["kind"], classes, len(vocab), a["embed_dim"], a["hidden"], a["memory"],
                              a["local_memory"], a["init_scale"])


def _run_one(cfg, vocab, plan, weights, names, out_dir, seed):
    os.makedirs(out_dir, exist_ok=True)
    model = build(_arch(cfg, vocab, plan), Rng(seed))
    if cfg.embeddings:
        table = load_embeddings(cfg.embeddings, vocab, model.config.embed_dim, rng=Rng(seed).spawn(2))
        for task in model.tasks:
            task.embedding.value[...] = table.matrix
        print(f"embeddings: {table.covered}/{len(vocab)} tokens covered ({table.coverage:.1%})", file=sys.stderr)
    bundles = [TaskBundle(n, tr, dv, te, w) for n, (tr, dv, te), w in zip(names, plan, weights)]
    rng = Rng(seed).spawn(1)
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    with open(metrics_path, "w", encoding="utf-8") as fh:
        def log(rec):
            fh.write(_jsonl(rec) + "\n")
            fh.flush()

        report = train(model, bundles, cfg.train, log=log, rng=rng)
    checkpoint.save(os.path.join(out_dir, "model.ckpt"), model, vocab, report.steps, rng.get_state(),
                    {"task_names": names})
    tests = [r for r in report.history if r["split"] == "test"]
    return report, tests


def cmd_train(args):
    if not args.config:
        raise ConfigError("--config: a run config file is required for train")
    cfg = config_mod.load(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    cfg.train.seed = seed
    cfg.seed = seed
    out = args.out or cfg.output_dir
    vocab, raw, weights, names = _load_tasks(cfg)
    plans = _fold_plans(cfg, raw)
    summary = []
    for k, plan in enumerate(plans):
        out_dir = out if len(plans) == 1 else os.path.join(out, f"fold{k}")
        report, tests = _run_one(cfg, vocab, plan, weights, names, out_dir, seed)
        summary.append({"fold": k if len(plans) > 1 else None, "best_epoch": report.best_epoch,
                        "epochs_run": report.epochs_run, "steps": report.steps,
                        "test": {r["task"]: r["accuracy"] for r in tests}})
    if len(plans) > 1:
        means = {n: float(np.mean([s["test"][n] for s in summary if n in s["test"]])) for n in names}
        print(_jsonl({"cv_mean_test_accuracy": means}))
    for s in summary:
        print(_jsonl(s))
    return EXIT_OK


def cmd_eval(args):
    ck = checkpoint.load(args.checkpoint)
    if ck.vocab is None:
        raise checkpoint.CheckpointError("checkpoint carries no vocabulary; cannot map tokens")
    model = ck.model
    if not 0 <= args.task < len(model.tasks):
        raise ConfigError(f"--task: {args.task} is not a task of this checkpoint ({len(model.tasks)} tasks)")
    corpus, _ = load_corpus(args.data, ck.vocab, extend=False, max_length=args.max_length,
                            num_classes=model.tasks[args.task].head.classes)
    res = evaluate(model, args.task, corpus)
    print(_jsonl({"task": args.task, "accuracy": res.accuracy, "correct": res.correct, "total": res.total,
                  "per_class": res.per_class, "loss": res.loss}))
    return EXIT_OK


def cmd_gradcheck(args):
    dims = {"d": args.d, "K": args.K, "M": args.M, "m": args.m, "T": args.T}
    too_big = [k for k, v in dims.items() if v > 8 or v < 1]
    if too_big:
        raise ConfigError(f"{', '.join('--' + k for k in too_big)}: gradient checks need dims in [1, 8]")
    seed = 0 if args.seed is None else args.seed
    kinds = KINDS if args.kind == "all" else [args.kind]
    worst = 0.0
    for kind in kinds:
        model, data = gradcheck.make_instance(kind, seed=seed, C=args.classes, align=args.align, **dims)
        errs = gradcheck.check(model, data, epsilon=args.epsilon)
        for name, err in errs.items():
            status = "ok" if err < gradcheck.TOLERANCE else "FAIL"
            print(f"{kind:15s} {name:40s} {err:.3e} {status}")
            worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {gradcheck.TOLERANCE:g})")
    return EXIT_OK if worst < gradcheck.TOLERANCE else EXIT_FAIL


def cmd_trace(args):
    ck = checkpoint.load(args.checkpoint)
    if ck.vocab is None:
        raise checkpoint.CheckpointError("checkpoint carries no vocabulary; cannot map tokens")
    if not 0 <= args.task < len(ck.model.tasks):
        raise ConfigError(f"--task: {args.task} is not a task of this checkpoint")
    seqs = trace.read_inputs(args.input)
    records = trace.trace_sequences(ck.model, args.task, ck.vocab, seqs)
    if args.out:
        n = trace.write(args.out, records)
        print(f"wrote {n} trace records to {args.out}", file=sys.stderr)
    else:
        for rec in records:
            print(trace.dumps(rec))
    return EXIT_OK


def cmd_bench(args):
    setup = bench_mod.BenchSetup(examples=args.examples, repeats=args.repeats, warmup=args.warmup)
    if args.config:
        cfg = config_mod.load(args.config, check_paths=False)
        a = cfg.architecture
        setup.hidden, setup.embed_dim = a["hidden"], a["embed_dim"]
        setup.K, setup.M = a["memory"]["K"], a["memory"]["M"]
        setup.batch_size = cfg.train.batch_size
    if args.seed is not None:
        setup.seed = args.seed
    if args.kinds:
        setup.kinds = args.kinds
    report = bench_mod.run(setup)
    for kind, e in report["kinds"].items():
        ratio = e.get("ratio_to_lstm")
        extra = "" if ratio is None else f"  x{ratio:.2f} vs single-lstm"
        print(f"{kind:15s} median {e['median'] * 1000:9.1f} ms/epoch  spread {e['spread']:.1%}{extra}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    return EXIT_OK


def cmd_synth(args):
    seed = 0 if args.seed is None else args.seed
    spec = SynthSpec(tasks=args.tasks, strength=args.strength, vocab_size=args.vocab_size, size=args.size,
                     seed=seed, patterns=args.patterns)
    try:
        corpora, vocab = synth_tasks(spec)
    except ValueError as exc:
        raise ConfigError(f"synth: {exc}") from None
    out = args.out or "synth"
    os.makedirs(out, exist_ok=True)
    informative = {}
    for m, c in enumerate(corpora):
        save_corpus(c, vocab, os.path.join(out, f"task{m}.txt"))
        informative[f"task{m}"] = sorted(vocab.tokens[i] for i in c.informative)
    with open(os.path.join(out, "informative.json"), "w", encoding="utf-8") as fh:
        json.dump(informative, fh, indent=1, sort_keys=True)
    print(f"wrote {len(corpora)} tasks of {spec.size} examples to {out}", file=sys.stderr)
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config JSON file")
    common.add_argument("--seed", type=int, default=None, help="override the seed")
    common.add_argument("--out", help="output directory (train, synth) or file (trace, bench)")

    parser = argparse.ArgumentParser(prog="melstm", description="Memory-enhanced LSTM multi-task experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model from a run config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a corpus file")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--max-length", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--kind", choices=("all",) + KINDS, default="all")
    for flag, default in (("d", 4), ("K", 3), ("M", 4), ("m", 3), ("T", 6)):
        p.add_argument(f"--{flag}", type=int, default=default)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--align", choices=("cosine", "additive"), default="cosine")
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("trace", parents=[common], help="per-timestep probabilities, gates and attention")
    p.add_argument("checkpoint")
    p.add_argument("input", help="corpus file or one whitespace-tokenized text per line")
    p.add_argument("--task", type=int, default=0)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("bench", parents=[common], help="per-epoch timing of all architectures")
    p.add_argument("--examples", type=int, default=64, help="examples per task")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--kinds", nargs="+", choices=KINDS)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", parents=[common], help="write synthetic related-task corpora")
    p.add_argument("--tasks", type=int, default=2)
    p.add_argument("--strength", type=float, default=0.8)
    p.add_argument("--size", type=int, default=700)
    p.add_argument("--vocab-size", type=int, default=800)
    p.add_argument("--patterns", type=int, default=100)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, checkpoint.CheckpointError, TrainingDiverged, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
