"""Experiment configuration: strict JSON parsing and canonical hashing.

Configs are nested JSON. Validation is deliberately unforgiving: unknown
keys are errors naming the full dotted path, because a silently ignored
typo ("max_epochss") would corrupt an entire comparison grid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any

from .data import TASKS
from .errors import ConfigError

STAGE_NAMES = ("vanilla", "kd", "kd_ulb", "kd_ulb_embed")
EMBEDDING_SOURCES = ("none", "vectors_file", "teacher_embed")

_SPEC_KEYS = {
    "family", "size", "name", "embed_dim", "layers", "attn_heads",
    "ffn_dim", "hidden_dim", "blocks", "kernel_size", "dropout",
}
_TRAIN_KEYS = {
    "loss_mode", "temperature", "lr", "optimizer", "batch_size",
    "max_epochs", "patience", "lr_grid",
}
_SYNTH_KEYS = {
    "classification": {
        "seed", "n_train", "n_dev", "n_test", "n_classes",
        "vocab_size", "length_range", "noise",
    },
    "sequence_labeling": {
        "seed", "n_train", "n_dev", "n_test", "n_types",
        "length_range", "noise", "lexicon_size",
    },
}


def _reject_unknown(obj: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"unknown config key {path}.{unknown[0]}")


def _require(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise ConfigError(f"missing required config key {path}.{key}")
    return obj[key]


def _typed(obj: dict, key: str, types, path: str, default=None):
    if key not in obj:
        return default
    val = obj[key]
    if not isinstance(val, types):
        raise ConfigError(
            f"config key {path}.{key} has type {type(val).__name__}, "
            f"expected {getattr(types, '__name__', types)}"
        )
    return val


@dataclass
class ExperimentConfig:
    task: str
    data: dict
    teacher: dict
    students: list[dict]
    stages: list[str]
    out_dir: str
    train: dict = field(default_factory=dict)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    max_len: int = 64
    pool: dict | None = None
    balance: dict | None = None
    length_filter: dict | None = None
    embedding: dict = field(default_factory=lambda: {"source": "none"})
    export: dict | None = None
    bench: dict | None = None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "data": self.data,
            "teacher": self.teacher,
            "students": self.students,
            "stages": list(self.stages),
            "out_dir": self.out_dir,
            "train": self.train,
            "seeds": list(self.seeds),
            "max_len": self.max_len,
            "pool": self.pool,
            "balance": self.balance,
            "length_filter": self.length_filter,
            "embedding": self.embedding,
            "export": self.export,
            "bench": self.bench,
        }


_TOP_KEYS = {
    "task", "data", "teacher", "students", "stages", "out_dir", "train",
    "seeds", "max_len", "pool", "balance", "length_filter", "embedding",
    "export", "bench",
}


def _validate_spec_entry(entry: Any, path: str) -> dict:
    if not isinstance(entry, dict):
        raise ConfigError(f"config key {path} must be an object")
    _reject_unknown(entry, _SPEC_KEYS, path)
    family = _require(entry, "family", path)
    if family not in ("transformer", "bilstm", "cnn"):
        raise ConfigError(f"config key {path}.family has unknown value {family!r}")
    if "size" in entry and family != "transformer":
        raise ConfigError(f"config key {path}.size applies to transformer only")
    return dict(entry)


def _validate_data(data: Any, task: str, path: str) -> dict:
    if not isinstance(data, dict):
        raise ConfigError(f"config key {path} must be an object")
    _reject_unknown(data, {"synth", "paths"}, path)
    if ("synth" in data) == ("paths" in data):
        raise ConfigError(f"config key {path} needs exactly one of synth|paths")
    if "synth" in data:
        synth = data["synth"]
        if not isinstance(synth, dict):
            raise ConfigError(f"config key {path}.synth must be an object")
        _reject_unknown(synth, _SYNTH_KEYS[task], f"{path}.synth")
    else:
        paths = data["paths"]
        if not isinstance(paths, dict):
            raise ConfigError(f"config key {path}.paths must be an object")
        _reject_unknown(paths, {"train", "dev", "test", "name"}, f"{path}.paths")
        for split in ("train", "dev", "test"):
            _require(paths, split, f"{path}.paths")
    return data


def validate_config(raw: Any) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    _reject_unknown(raw, _TOP_KEYS, "config")

    task = _require(raw, "task", "config")
    if task not in TASKS:
        raise ConfigError(f"config key config.task must be one of {TASKS}, got {task!r}")

    data = _validate_data(_require(raw, "data", "config"), task, "config.data")
    teacher = _validate_spec_entry(_require(raw, "teacher", "config"), "config.teacher")

    students_raw = _require(raw, "students", "config")
    if not isinstance(students_raw, list) or not students_raw:
        raise ConfigError("config key config.students must be a non-empty list")
    students = [
        _validate_spec_entry(s, f"config.students[{i}]")
        for i, s in enumerate(students_raw)
    ]

    stages = _require(raw, "stages", "config")
    if not isinstance(stages, list) or not stages:
        raise ConfigError("config key config.stages must be a non-empty list")
    for s in stages:
        if s not in STAGE_NAMES:
            raise ConfigError(
                f"config key config.stages contains {s!r}, expected one of {STAGE_NAMES}"
            )

    out_dir = _require(raw, "out_dir", "config")
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError("config key config.out_dir must be a non-empty string")

    train = _typed(raw, "train", dict, "config", default={})
    _reject_unknown(train, _TRAIN_KEYS, "config.train")

    seeds = _typed(raw, "seeds", list, "config", default=[0, 1, 2])
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("config key config.seeds must be a non-empty list of ints")

    max_len = _typed(raw, "max_len", int, "config", default=64)
    if max_len < 2:
        raise ConfigError("config key config.max_len must be >= 2")

    pool = _typed(raw, "pool", dict, "config")
    if pool is not None:
        _reject_unknown(pool, {"synth", "paths"}, "config.pool")
        if ("synth" in pool) == ("paths" in pool):
            raise ConfigError("config key config.pool needs exactly one of synth|paths")
        if "synth" in pool:
            if not isinstance(pool["synth"], dict):
                raise ConfigError("config key config.pool.synth must be an object")
            _reject_unknown(pool["synth"], _SYNTH_KEYS[task], "config.pool.synth")
        elif not isinstance(pool["paths"], list) or not pool["paths"]:
            raise ConfigError("config key config.pool.paths must be a non-empty list")

    balance = _typed(raw, "balance", dict, "config")
    if balance is not None:
        _reject_unknown(balance, {"strategy", "n", "seed"}, "config.balance")
        strategy = _require(balance, "strategy", "config.balance")
        if strategy not in ("median_cap", "target_oversample"):
            raise ConfigError(
                f"config key config.balance.strategy has unknown value {strategy!r}"
            )
        if strategy == "target_oversample":
            n = _require(balance, "n", "config.balance")
            if not isinstance(n, int) or n < 1:
                raise ConfigError("config key config.balance.n must be an int >= 1")

    length_filter = _typed(raw, "length_filter", dict, "config")
    if length_filter is not None:
        _reject_unknown(length_filter, {"mode"}, "config.length_filter")
        mode = _require(length_filter, "mode", "config.length_filter")
        if mode not in ("min_max", "q1_q3"):
            raise ConfigError(
                f"config key config.length_filter.mode has unknown value {mode!r}"
            )

    embedding = _typed(raw, "embedding", dict, "config", default={"source": "none"})
    _reject_unknown(embedding, {"source", "path"}, "config.embedding")
    source = embedding.get("source", "none")
    if source not in EMBEDDING_SOURCES:
        raise ConfigError(
            f"config key config.embedding.source must be one of {EMBEDDING_SOURCES}"
        )
    if source == "vectors_file" and not embedding.get("path"):
        raise ConfigError("missing required config key config.embedding.path")

    export = _typed(raw, "export", dict, "config")
    if export is not None:
        _reject_unknown(export, {"precision"}, "config.export")
        precision = export.get("precision", "f32")
        if precision not in ("f32", "f16", "int8"):
            raise ConfigError(
                f"config key config.export.precision has unknown value {precision!r}"
            )

    bench = _typed(raw, "bench", dict, "config")
    if bench is not None:
        _reject_unknown(bench, {"lengths", "iterations", "warmup"}, "config.bench")

    # stage prerequisites are config errors, caught before any training runs
    if any(s in stages for s in ("kd_ulb", "kd_ulb_embed")) and pool is None:
        raise ConfigError("stages kd_ulb/kd_ulb_embed require config key config.pool")
    if "kd_ulb_embed" in stages and source == "none":
        raise ConfigError(
            "stage kd_ulb_embed requires config key config.embedding.source != 'none'"
        )

    return ExperimentConfig(
        task=task, data=data, teacher=teacher, students=students,
        stages=list(stages), out_dir=out_dir, train=dict(train),
        seeds=list(seeds), max_len=max_len, pool=pool, balance=balance,
        length_filter=length_filter, embedding=dict(embedding),
        export=export, bench=bench,
    )


def parse_config(path: str) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return validate_config(raw)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
