"""Run configuration: one JSON document describing a whole experiment.

Keys (all optional unless noted)::

    {
      "architecture": {"kind": "arc1", "hidden": 100, "embed_dim": 100,
                       "memory": {"K": 50, "M": 20, "align": "cosine"},
                       "local_memory": null, "init_scale": 0.1},
      "train": {"learning_rate": 0.01, "l2": 0.0, "batch_size": 16,
                "epochs": 20, "patience": 10, "clip_norm": 5.0},
      "tasks": [                                   # required unless "synth"
        {"name": "sst1", "train": "data/sst1.train", "dev": "data/sst1.dev",
         "test": "data/sst1.test", "weight": 1.0, "split": "fixed",
         "classes": 5}
      ],
      "synth": {"tasks": 2, "strength": 0.8, "size": 700, "train": 500},
      "embeddings": "glove.100d.txt",
      "max_length": 400,
      "output_dir": "runs/sst",
      "seed": 1
    }

Relative paths are resolved against the directory holding the config file.
``split`` is ``fixed`` (use the given files), ``fractions`` (carve
train/dev/test 70/20/10 out of ``train``) or ``cv`` (10-fold cross
validation over ``train``). ``synth`` replaces ``tasks`` with generated
related tasks whose first ``train`` examples train and the rest test.
"""

import json
import os
from dataclasses import dataclass, field, fields

from .data import SynthSpec
from .memory import MemoryConfig
from .multitask import KINDS, ConfigError
from .training import TrainConfig

SPLITS = ("fixed", "fractions", "cv")
_TOP_KEYS = {"architecture", "train", "tasks", "synth", "embeddings", "max_length", "output_dir", "seed"}
_ARCH_KEYS = {"kind", "hidden", "embed_dim", "memory", "local_memory", "init_scale"}
_TASK_KEYS = {"name", "train", "dev", "test", "weight", "split", "classes"}


@dataclass
class TaskSpec:
    name: str
    train: str
    dev: str = None
    test: str = None
    weight: float = 1.0
    split: str = "fixed"
    classes: int = None


@dataclass
class RunConfig:
    architecture: dict
    train: TrainConfig
    tasks: list = field(default_factory=list)
    synth: dict = None
    embeddings: str = None
    max_length: int = 400
    output_dir: str = "run"
    seed: int = 1

    def synth_spec(self):
        keys = {f.name for f in fields(SynthSpec)}
        spec = SynthSpec(**{k: v for k, v in self.synth.items() if k in keys})
        if "length" in self.synth:
            spec.length = tuple(self.synth["length"])
        return spec

    def synth_train_size(self):
        return int(self.synth.get("train", max(1, self.synth_spec().size * 5 // 7)))


def _err(problems):
    return ConfigError("invalid run config:\n  " + "\n  ".join(problems))


def _memory(raw, where, problems):
    if raw is None:
        return None
    if not isinstance(raw, dict):
        problems.append(f"{where}: expected an object with K and M")
        return None
    try:
        return MemoryConfig(**raw).to_dict()
    except (TypeError, ValueError) as exc:
        problems.append(f"{where}: {exc}")
        return None


def parse(doc, base_dir=".", check_paths=True):
    """Validate a decoded JSON document. All problems are reported together."""
    problems = []
    if not isinstance(doc, dict):
        raise _err(["top level: expected a JSON object"])
    for key in sorted(set(doc) - _TOP_KEYS):
        problems.append(f"{key}: unknown key")

    arch = dict(doc.get("architecture") or {})
    for key in sorted(set(arch) - _ARCH_KEYS):
        problems.append(f"architecture.{key}: unknown key")
    arch.setdefault("kind", "arc1")
    if arch["kind"] not in KINDS:
        problems.append(f"architecture.kind: must be one of {', '.join(KINDS)}, got {arch['kind']!r}")
    for key, default in (("hidden", 100), ("embed_dim", 100)):
        arch.setdefault(key, default)
        if not isinstance(arch[key], int) or arch[key] < 1:
            problems.append(f"architecture.{key}: must be a positive integer")
    arch["memory"] = _memory(arch.get("memory", {"K": 50, "M": 20}), "architecture.memory", problems)
    arch["local_memory"] = _memory(arch.get("local_memory"), "architecture.local_memory", problems)
    arch.setdefault("init_scale", 0.1)

    train_raw = dict(doc.get("train") or {})
    train_keys = {f.name for f in fields(TrainConfig)}
    for key in sorted(set(train_raw) - train_keys):
        problems.append(f"train.{key}: unknown key")
    seed = doc.get("seed", 1)
    if not isinstance(seed, int):
        problems.append("seed: must be an integer")
        seed = 1
    train_raw.setdefault("seed", seed)
    train_cfg = None
    try:
        train_cfg = TrainConfig(**{k: v for k, v in train_raw.items() if k in train_keys})
    except (TypeError, ValueError) as exc:
        problems.append(f"train: {exc}")

    def resolve(path):
        return path if path is None or os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))

    tasks = []
    synth = doc.get("synth")
    raw_tasks = doc.get("tasks")
    if synth is not None and raw_tasks:
        problems.append("tasks: give either 'tasks' or 'synth', not both")
    elif synth is None:
        if not raw_tasks:
            problems.append("tasks: at least one task is required")
        names = set()
        for i, t in enumerate(raw_tasks or []):
            where = f"tasks[{i}]"
            if not isinstance(t, dict):
                problems.append(f"{where}: expected an object")
                continue
            for key in sorted(set(t) - _TASK_KEYS):
                problems.append(f"{where}.{key}: unknown key")
            name = t.get("name", f"task{i}")
            if name in names:
                problems.append(f"{where}.name: duplicate task name {name!r}")
            names.add(name)
            if "train" not in t:
                problems.append(f"{where}.train: missing")
            split_scheme = t.get("split", "fixed")
            if split_scheme not in SPLITS:
                problems.append(f"{where}.split: must be one of {', '.join(SPLITS)}")
            weight = t.get("weight", 1.0)
            if not isinstance(weight, (int, float)) or weight < 0:
                problems.append(f"{where}.weight: must be a non-negative number")
            spec = TaskSpec(name, resolve(t.get("train")), resolve(t.get("dev")), resolve(t.get("test")),
                            float(weight) if isinstance(weight, (int, float)) else 1.0, split_scheme, t.get("classes"))
            if check_paths:
                for key in ("train", "dev", "test"):
                    path = getattr(spec, key)
                    if path is not None and not os.path.isfile(path):
                        problems.append(f"{where}.{key}: file not found: {path}")
            tasks.append(spec)
    elif not isinstance(synth, dict):
        problems.append("synth: expected an object")

    embeddings = resolve(doc.get("embeddings"))
    if check_paths and embeddings is not None and not os.path.isfile(embeddings):
        problems.append(f"embeddings: file not found: {embeddings}")
    max_length = doc.get("max_length", 400)
    if max_length is not None and (not isinstance(max_length, int) or max_length < 1):
        problems.append("max_length: must be a positive integer or null")

    cfg = RunConfig(arch, train_cfg, tasks, synth, embeddings, max_length,
                    resolve(doc.get("output_dir", "run")), seed)
    if synth is not None and isinstance(synth, dict):
        try:
            spec = cfg.synth_spec()
            spec.validate()
            if not 1 <= cfg.synth_train_size() < spec.size:
                problems.append("synth.train: must leave at least one test example")
        except (TypeError, ValueError) as exc:
            problems.append(f"synth: {exc}")
    if problems:
        raise _err(problems)
    return cfg


def load(path, check_paths=True):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON ({exc})") from None
    return parse(doc, os.path.dirname(os.path.abspath(path)), check_paths)
