"""Command-line entry point.

Every subcommand is a thin wrapper over one library operation. Exit codes:
0 success, 1 operational failure (bad data, failed stage, missing files),
2 usage error (argparse's own convention).
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import parse_config
from .data import save_classification_csv, save_conll, synth_classification, synth_sequence_labeling
from .errors import KdkitError
from .frozen import export_frozen, load_frozen
from .runner import (
    cmd_augment,
    cmd_bench,
    cmd_distill,
    cmd_report,
    cmd_run,
    cmd_search_lr,
    cmd_train_teacher,
)

TASK_ALIASES = {"cls": "classification", "seqlab": "sequence_labeling"}


def _print_outputs(outputs: dict[str, str]) -> None:
    for key, value in outputs.items():
        print(f"{key}: {value}")


def _cmd_run(args) -> int:
    _print_outputs(cmd_run(parse_config(args.config)))
    return 0


def _cmd_train_teacher(args) -> int:
    _print_outputs(cmd_train_teacher(parse_config(args.config), out_dir=args.out))
    return 0


def _cmd_distill(args) -> int:
    _print_outputs(cmd_distill(
        parse_config(args.config), stage=args.stage, seed=args.seed,
        loss_mode=args.loss, out_dir=args.out,
    ))
    return 0


def _cmd_augment(args) -> int:
    _print_outputs(cmd_augment(parse_config(args.config), out_dir=args.out))
    return 0


def _cmd_bench(args) -> int:
    _print_outputs(cmd_bench(parse_config(args.config), out_dir=args.out))
    return 0


def _cmd_export(args) -> int:
    frozen = load_frozen(args.input)
    out = args.out or os.path.splitext(args.input)[0] + f".{args.precision}.kdfz"
    written = export_frozen(frozen.model, out, precision=args.precision)
    print(f"exported: {out}")
    print(f"bytes: {written}")
    return 0


def _cmd_search_lr(args) -> int:
    _print_outputs(cmd_search_lr(
        parse_config(args.config), trials=args.trials,
        lo=args.min, hi=args.max, seed=args.seed or 0, out_dir=args.out,
    ))
    return 0


def _cmd_synth(args) -> int:
    task = TASK_ALIASES.get(args.task, args.task)
    out = args.out
    os.makedirs(out, exist_ok=True)
    if task == "classification":
        dataset = synth_classification(seed=args.seed or 0)
        paths = save_classification_csv(dataset, out)
    else:
        dataset = synth_sequence_labeling(seed=args.seed or 0)
        paths = save_conll(dataset, out)
    for p in paths:
        print(f"wrote: {p}")
    return 0


def _cmd_report(args) -> int:
    out_path = cmd_report(
        os.path.join(args.out, "results"), os.path.join(args.out, "summary.md")
    )
    print(f"summary: {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdkit",
        description="Distillation workbench: teacher fine-tuning, student "
        "distillation, pool augmentation, frozen export, CPU benchmarking.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("run", _cmd_run, "run the full students x stages x seeds grid")
    p.add_argument("--config", required=True, help="experiment config (JSON)")

    p = add("train-teacher", _cmd_train_teacher, "fine-tune and export the teacher only")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (default: config out_dir)")

    p = add("distill", _cmd_distill, "train students for one stage and seed")
    p.add_argument("--config", required=True)
    p.add_argument("--stage", default="kd", help="pipeline stage (default kd)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--loss", choices=("mse", "kld", "hard"), default=None)
    p.add_argument("--out", default=None)

    p = add("augment", _cmd_augment, "build the unlabeled pool and its length stats")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)

    p = add("bench", _cmd_bench, "CPU latency and size tables for the configured models")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)

    p = add("export", _cmd_export, "re-export a frozen model at a different precision")
    p.add_argument("input", help="source .kdfz file")
    p.add_argument("--precision", choices=("f32", "f16", "int8"), default="f32")
    p.add_argument("--out", default=None, help="output path (default: derived)")

    p = add("search-lr", _cmd_search_lr, "random learning-rate search (log-uniform)")
    p.add_argument("--config", required=True)
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--min", type=float, default=5e-5, help="lower bound (default 5e-5)")
    p.add_argument("--max", type=float, default=1e-2, help="upper bound (default 1e-2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)

    p = add("synth", _cmd_synth, "generate a synthetic dataset")
    p.add_argument("--task", choices=("cls", "seqlab"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="directory for the split files")

    p = add("report", _cmd_report, "rebuild summary.md from result CSVs")
    p.add_argument("--out", required=True, help="run output directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KdkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
