"""Experiment orchestration: data prep, stage grid, result files.

The grid is students x stages x seeds, teacher trained once up front. Output
layout under the configured directory:

    results/results.csv   one row per cell, plus the teacher row
    summary.md            mean F1 over seeds, teacher first, stages in
                          pipeline order
    models/*.kdfz         optional frozen exports
    cost/cost.csv|.md     optional latency/size tables

Result CSVs carry no timing columns and use fixed float formats, so a rerun
with the same config is byte-identical.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import replace

from .augment import (
    UnlabeledPool,
    balance_pool,
    filter_by_length,
    length_stats,
    load_pool,
    merge_pools,
    pseudo_label,
    save_pool,
)
from .bench import DEFAULT_LENGTHS, bench_latency, bench_latency_live, emit_cost_table
from .config import ExperimentConfig, config_hash
from .data import (
    CLASSIFICATION,
    Dataset,
    dataset_content_hash,
    load_classification_csv,
    load_conll,
    synth_classification,
    synth_sequence_labeling,
)
from .distill import (
    STAGES,
    DistillConfig,
    StageResult,
    evaluate_f1,
    fine_tune_teacher,
    lr_random_search,
    run_pipeline,
)
from .embeddings import extract_teacher_embeddings, load_word_vectors
from .errors import ConfigError, KdkitError
from .frozen import export_frozen, freeze
from .models import ModelSpec, build_model, desk_spec
from .text import Vocab

RESULT_COLUMNS = (
    "model", "stage", "loss_mode", "lr", "seed",
    "dev_f1", "test_f1", "best_epoch", "steps_to_best",
    "config_hash", "data_hash",
)

_SPEC_OVERRIDE_KEYS = (
    "embed_dim", "layers", "attn_heads", "ffn_dim", "hidden_dim",
    "blocks", "kernel_size", "dropout",
)


def spec_from_entry(
    entry: dict,
    task: str,
    vocab_size: int,
    max_len: int,
    num_classes: int,
    default_size: str,
) -> tuple[ModelSpec, str]:
    """Build a model spec from a config entry; returns (spec, display name)."""
    family = entry["family"]
    size = entry.get("size", default_size) if family == "transformer" else None
    spec = desk_spec(
        family, vocab_size=vocab_size, max_len=max_len,
        num_classes=num_classes, task=task,
        **({"size": size} if size else {}),
    )
    overrides = {k: entry[k] for k in _SPEC_OVERRIDE_KEYS if k in entry}
    if overrides:
        spec = replace(spec, **overrides)
    name = entry.get("name")
    if not name:
        name = f"{family}-{size}" if size else family
    return spec, name


def prepare_dataset(cfg: ExperimentConfig) -> Dataset:
    data = cfg.data
    if "synth" in data:
        params = dict(data["synth"])
        params.setdefault("seed", 0)
        if "length_range" in params:
            params["length_range"] = tuple(params["length_range"])
        if cfg.task == CLASSIFICATION:
            return synth_classification(**params)
        return synth_sequence_labeling(**params)
    paths = data["paths"]
    name = paths.get("name", "dataset")
    if cfg.task == CLASSIFICATION:
        return load_classification_csv(
            paths["train"], paths["dev"], paths["test"], name=name
        )
    return load_conll(paths["train"], paths["dev"], paths["test"], name=name)


def prepare_pool_texts(cfg: ExperimentConfig, dataset: Dataset) -> list[str] | None:
    """Raw pool texts before labeling: synth twin datasets or line files,
    merged and deduplicated, optionally length-filtered against the labeled
    train split."""
    if cfg.pool is None:
        return None
    if "synth" in cfg.pool:
        base = dict(cfg.data.get("synth", {}))
        base.update(cfg.pool["synth"])
        base.setdefault("seed", 0)
        if "length_range" in base:
            base["length_range"] = tuple(base["length_range"])
        if cfg.task == CLASSIFICATION:
            twin = synth_classification(**base)
        else:
            twin = synth_sequence_labeling(**base)
        pool = merge_pools([twin])
    else:
        pools = [load_pool(p, source=os.path.basename(p)) for p in cfg.pool["paths"]]
        merged_texts: list[str] = []
        merged_sources: list[str] = []
        seen: set[str] = set()
        for p in pools:
            for text, src in zip(p.texts, p.sources):
                if text not in seen:
                    seen.add(text)
                    merged_texts.append(text)
                    merged_sources.append(src)
        pool = UnlabeledPool(texts=merged_texts, sources=merged_sources)
    if cfg.length_filter is not None:
        ref = length_stats(dataset.all_train_texts())
        pool = filter_by_length(pool, cfg.length_filter["mode"], ref)
    return list(pool.texts)


def _balanced_pool_texts(cfg, dataset, teacher, vocab, texts: list[str]) -> list[str]:
    if cfg.balance is None or not texts:
        return texts
    pool = UnlabeledPool(texts=texts, sources=["pool"] * len(texts))
    pls = pseudo_label(teacher, pool, vocab, cfg.task)
    balanced = balance_pool(
        pls,
        cfg.balance["strategy"],
        n=cfg.balance.get("n"),
        seed=cfg.balance.get("seed", 0),
    )
    return list(balanced.texts)


def base_distill_config(cfg: ExperimentConfig) -> DistillConfig:
    params = dict(cfg.train)
    if "lr_grid" in params:
        params["lr_grid"] = tuple(params["lr_grid"])
    return DistillConfig(**params)


def format_row(row: StageResult, cfg_hash: str, data_hash: str) -> dict[str, str]:
    return {
        "model": row.model,
        "stage": row.stage,
        "loss_mode": row.loss_mode,
        "lr": f"{row.lr:.6g}",
        "seed": str(row.seed),
        "dev_f1": f"{row.dev_f1:.4f}",
        "test_f1": f"{row.test_f1:.4f}",
        "best_epoch": str(row.best_epoch),
        "steps_to_best": str(row.steps_to_best),
        "config_hash": cfg_hash,
        "data_hash": data_hash,
    }


def write_results_csv(rows: list[dict[str, str]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_results_csv(path: str) -> list[dict[str, str]]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(rows: list[dict[str, str]]) -> str:
    """Markdown summary: teacher row first, then each student's stages in
    pipeline order with F1 averaged over seeds."""
    def mean(vals: list[float]) -> float:
        return sum(vals) / len(vals)

    groups: dict[tuple[str, str], list[dict[str, str]]] = {}
    model_order: list[str] = []
    for row in rows:
        key = (row["model"], row["stage"])
        groups.setdefault(key, []).append(row)
        if row["stage"] != "teacher" and row["model"] not in model_order:
            model_order.append(row["model"])

    out = io.StringIO()
    out.write("# Distillation results\n\n")
    hashes = {(r["config_hash"], r["data_hash"]) for r in rows}
    if len(hashes) == 1:
        ch, dh = next(iter(hashes))
        out.write(f"config `{ch}` / data `{dh}`\n\n")
    out.write("| model | stage | loss | mean dev F1 | mean test F1 | seeds |\n")
    out.write("|---|---|---|---|---|---|\n")

    def emit(key: tuple[str, str]) -> None:
        cells = groups[key]
        dev = mean([float(r["dev_f1"]) for r in cells])
        test = mean([float(r["test_f1"]) for r in cells])
        loss = cells[0]["loss_mode"]
        out.write(
            f"| {key[0]} | {key[1]} | {loss} | {dev:.4f} | {test:.4f} | {len(cells)} |\n"
        )

    for key in groups:
        if key[1] == "teacher":
            emit(key)
    for model in model_order:
        for stage in STAGES:
            if (model, stage) in groups:
                emit((model, stage))
    return out.getvalue()


class Prepared:
    """Everything the stage grid needs: data, vocab, trained teacher, the
    labeled pool texts, and the embedding table (when configured)."""

    def __init__(self, cfg: ExperimentConfig):
        self.dataset = prepare_dataset(cfg)
        self.data_hash = dataset_content_hash(self.dataset)
        self.cfg_hash = config_hash(cfg)
        pool_raw = prepare_pool_texts(cfg, self.dataset)
        vocab_texts = self.dataset.all_train_texts() + (pool_raw or [])
        self.vocab = Vocab.build_from_texts(vocab_texts)
        self.base_cfg = base_distill_config(cfg)
        self.teacher_spec, self.teacher_name = spec_from_entry(
            cfg.teacher, cfg.task, len(self.vocab), cfg.max_len,
            self.dataset.num_classes, default_size="teacher",
        )
        teacher_cfg = replace(self.base_cfg, seed=cfg.seeds[0])
        self.teacher, self.teacher_hist = fine_tune_teacher(
            self.teacher_spec, self.dataset, self.vocab, teacher_cfg
        )
        self.teacher_row = StageResult(
            model=self.teacher_name, stage="teacher", loss_mode="ce",
            lr=teacher_cfg.lr, seed=teacher_cfg.seed,
            dev_f1=evaluate_f1(self.teacher, self.vocab, self.dataset, "dev"),
            test_f1=evaluate_f1(self.teacher, self.vocab, self.dataset, "test"),
            best_epoch=self.teacher_hist.best_epoch,
            steps_to_best=self.teacher_hist.steps_to_best,
        )
        self.pool_texts = None
        if pool_raw is not None:
            self.pool_texts = _balanced_pool_texts(
                cfg, self.dataset, self.teacher, self.vocab, pool_raw
            )
        self.table = None
        source = cfg.embedding.get("source", "none")
        if source == "teacher_embed":
            self.table = extract_teacher_embeddings(self.teacher, self.vocab)
        elif source == "vectors_file":
            self.table = load_word_vectors(cfg.embedding["path"])

    def student_spec(self, cfg: ExperimentConfig, entry: dict):
        return spec_from_entry(
            entry, cfg.task, len(self.vocab), cfg.max_len,
            self.dataset.num_classes, default_size="tiny",
        )


def cmd_run(cfg: ExperimentConfig) -> dict[str, str]:
    """Execute the full grid; returns the paths of everything written."""
    out_dir = cfg.out_dir
    results_dir = os.path.join(out_dir, "results")
    os.makedirs(results_dir, exist_ok=True)

    prep = Prepared(cfg)
    dataset, vocab, teacher = prep.dataset, prep.vocab, prep.teacher
    cfg_hash, data_hash = prep.cfg_hash, prep.data_hash
    base_cfg = prep.base_cfg

    rows: list[dict[str, str]] = [format_row(prep.teacher_row, cfg_hash, data_hash)]

    models_dir = os.path.join(out_dir, "models")
    if cfg.export is not None:
        os.makedirs(models_dir, exist_ok=True)
        export_frozen(
            teacher, os.path.join(models_dir, "teacher.kdfz"),
            precision=cfg.export.get("precision", "f32"),
        )

    results_path = os.path.join(results_dir, "results.csv")
    stages = [s for s in STAGES if s in cfg.stages]
    for entry in cfg.students:
        spec, name = prep.student_spec(cfg, entry)
        for stage in stages:
            for seed in cfg.seeds:
                cell_cfg = replace(base_cfg, seed=seed)
                try:
                    model, _, row = run_pipeline(
                        stage, dataset, vocab, spec, cell_cfg,
                        teacher=teacher, pool_texts=prep.pool_texts,
                        embedding_table=prep.table,
                    )
                except KdkitError as exc:
                    write_results_csv(rows, results_path)
                    raise KdkitError(
                        f"stage {stage!r} failed for {name} seed {seed}: {exc}"
                    ) from exc
                row = replace(row, model=name)
                rows.append(format_row(row, cfg_hash, data_hash))
                if cfg.export is not None:
                    export_frozen(
                        model,
                        os.path.join(models_dir, f"{name}_{stage}_seed{seed}.kdfz"),
                        precision=cfg.export.get("precision", "f32"),
                    )

    write_results_csv(rows, results_path)
    summary_path = os.path.join(out_dir, "summary.md")
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(summarize(rows))

    outputs = {"results": results_path, "summary": summary_path}

    if cfg.bench is not None:
        bench_models = [(prep.teacher_name, teacher)]
        for entry in cfg.students:
            spec, name = spec_from_entry(
                entry, cfg.task, len(vocab), cfg.max_len, dataset.num_classes,
                default_size="tiny",
            )
            bench_models.append((name, build_model(spec, seed=0)))
        outputs.update(_run_bench(cfg, bench_models, out_dir))

    return outputs


def _run_bench(
    cfg: ExperimentConfig, named_models: list[tuple[str, "object"]], out_dir: str
) -> dict[str, str]:
    cost_dir = os.path.join(out_dir, "cost")
    os.makedirs(cost_dir, exist_ok=True)
    bench_cfg = cfg.bench or {}
    lengths = tuple(bench_cfg.get("lengths", ())) or tuple(
        n for n in DEFAULT_LENGTHS if n <= cfg.max_len
    )
    iterations = bench_cfg.get("iterations", 100)
    warmup = bench_cfg.get("warmup", 10)
    reports = []
    for name, model in named_models:
        reports.append(bench_latency_live(
            model, lengths, iterations=iterations, warmup=warmup, name=name,
        ))
        reports.append(bench_latency(
            freeze(model), lengths, iterations=iterations, warmup=warmup, name=name,
        ))
    csv_text, md_text = emit_cost_table(reports)
    cost_csv = os.path.join(cost_dir, "cost.csv")
    cost_md = os.path.join(cost_dir, "cost.md")
    with open(cost_csv, "w", encoding="utf-8") as fh:
        fh.write(csv_text)
    with open(cost_md, "w", encoding="utf-8") as fh:
        fh.write(md_text)
    return {"cost_csv": cost_csv, "cost_md": cost_md}


def cmd_bench(cfg: ExperimentConfig, out_dir: str | None = None) -> dict[str, str]:
    """Latency/size tables from freshly built models; wall-clock numbers do
    not depend on training, so no teacher fine-tune happens here."""
    dataset = prepare_dataset(cfg)
    vocab = Vocab.build_from_texts(dataset.all_train_texts())
    named = []
    teacher_spec, teacher_name = spec_from_entry(
        cfg.teacher, cfg.task, len(vocab), cfg.max_len, dataset.num_classes,
        default_size="teacher",
    )
    named.append((teacher_name, build_model(teacher_spec, seed=0)))
    for entry in cfg.students:
        spec, name = spec_from_entry(
            entry, cfg.task, len(vocab), cfg.max_len, dataset.num_classes,
            default_size="tiny",
        )
        named.append((name, build_model(spec, seed=0)))
    return _run_bench(cfg, named, out_dir or cfg.out_dir)


def cmd_train_teacher(cfg: ExperimentConfig, out_dir: str | None = None) -> dict[str, str]:
    """Fine-tune the teacher alone and export it frozen."""
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    prep = Prepared(cfg)
    path = os.path.join(out, "teacher.kdfz")
    export_frozen(prep.teacher, path, precision="f32")
    return {
        "teacher": path,
        "dev_f1": f"{prep.teacher_row.dev_f1:.4f}",
        "test_f1": f"{prep.teacher_row.test_f1:.4f}",
    }


def cmd_distill(
    cfg: ExperimentConfig,
    stage: str,
    seed: int | None = None,
    loss_mode: str | None = None,
    out_dir: str | None = None,
) -> dict[str, str]:
    """One grid cell per student: a single stage and seed."""
    out = out_dir or cfg.out_dir
    results_dir = os.path.join(out, "results")
    os.makedirs(results_dir, exist_ok=True)
    prep = Prepared(cfg)
    use_seed = cfg.seeds[0] if seed is None else seed
    cell_cfg = replace(prep.base_cfg, seed=use_seed)
    if loss_mode is not None:
        cell_cfg = replace(cell_cfg, loss_mode=loss_mode)
    rows = [format_row(prep.teacher_row, prep.cfg_hash, prep.data_hash)]
    for entry in cfg.students:
        spec, name = prep.student_spec(cfg, entry)
        _, _, row = run_pipeline(
            stage, prep.dataset, prep.vocab, spec, cell_cfg,
            teacher=prep.teacher, pool_texts=prep.pool_texts,
            embedding_table=prep.table,
        )
        rows.append(format_row(replace(row, model=name), prep.cfg_hash, prep.data_hash))
    path = os.path.join(results_dir, f"distill_{stage}_seed{use_seed}.csv")
    write_results_csv(rows, path)
    return {"results": path}


def cmd_augment(cfg: ExperimentConfig, out_dir: str | None = None) -> dict[str, str]:
    """Materialize the unlabeled pool (merged, deduplicated, length-filtered)
    and its token-length statistics. No teacher involved."""
    if cfg.pool is None:
        raise ConfigError("config has no pool section to augment from")
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    dataset = prepare_dataset(cfg)
    texts = prepare_pool_texts(cfg, dataset) or []
    pool_path = os.path.join(out, "pool.txt")
    save_pool(UnlabeledPool(texts=texts, sources=["pool"] * len(texts)), pool_path)
    train_stats = length_stats(dataset.all_train_texts())
    lines = [
        f"pool_size {len(texts)}",
        f"train_len mean {train_stats.mean:.2f} std {train_stats.std:.2f} "
        f"min {train_stats.min} q1 {train_stats.q1} q3 {train_stats.q3} max {train_stats.max}",
    ]
    if texts:
        ps = length_stats(texts)
        lines.append(
            f"pool_len mean {ps.mean:.2f} std {ps.std:.2f} "
            f"min {ps.min} q1 {ps.q1} q3 {ps.q3} max {ps.max}"
        )
    stats_path = os.path.join(out, "pool_stats.txt")
    with open(stats_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return {"pool": pool_path, "stats": stats_path}


def cmd_search_lr(
    cfg: ExperimentConfig,
    trials: int,
    lo: float = 5e-5,
    hi: float = 1e-2,
    seed: int = 0,
    out_dir: str | None = None,
) -> dict[str, str]:
    """Random lr search for the first student on the kd stage (vanilla when
    kd is not in the configured stages)."""
    out = out_dir or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    prep = Prepared(cfg)
    stage = "kd" if "kd" in cfg.stages or not cfg.stages else cfg.stages[0]
    spec, name = prep.student_spec(cfg, cfg.students[0])

    def train_eval(lr: float) -> float:
        cell_cfg = replace(prep.base_cfg, lr=lr, seed=seed)
        _, _, row = run_pipeline(
            stage, prep.dataset, prep.vocab, spec, cell_cfg,
            teacher=prep.teacher, pool_texts=prep.pool_texts,
            embedding_table=prep.table,
        )
        return row.dev_f1

    result = lr_random_search(train_eval, trials=trials, lo=lo, hi=hi, seed=seed)
    path = os.path.join(out, "lr_search.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("trial,lr,dev_f1\n")
        for i, t in enumerate(result.trials):
            fh.write(f"{i},{t.lr:.6g},{t.dev_f1:.4f}\n")
    return {
        "search": path,
        "model": name,
        "stage": stage,
        "best_lr": f"{result.best_lr:.6g}",
        "best_dev_f1": f"{result.best_dev_f1:.4f}",
    }


def cmd_report(results_dir: str, out_path: str) -> str:
    """Rebuild summary.md from previously written result CSVs."""
    rows: list[dict[str, str]] = []
    if os.path.isdir(results_dir):
        for fname in sorted(os.listdir(results_dir)):
            if fname.endswith(".csv"):
                rows.extend(read_results_csv(os.path.join(results_dir, fname)))
    if not rows:
        raise ConfigError(f"no result rows found under {results_dir!r}")
    text = summarize(rows)
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return out_path
