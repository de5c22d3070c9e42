"""CPU latency benchmarking and cost tables.

Timing covers the forward pass of a single sentence only: inputs are built
and cached before the clock starts, warmup runs are discarded, and each
iteration is wrapped in perf_counter. Nothing here asserts absolute numbers;
the interesting outputs are orderings (family vs family, frozen vs live)
and the size/parameter accounting, which are machine-independent.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParameterError
from .frozen import FrozenModel, expected_file_bytes
from .models import Model, count_parameters, forward
from .tensor import Tape
from .text import PAD_ID

DEFAULT_LENGTHS = (4, 8, 16, 32, 64, 128)


@dataclass
class LatencyStats:
    mean_ms: float
    std_ms: float
    min_ms: float
    max_ms: float


@dataclass
class CostReport:
    model: str
    variant: str
    param_count: int
    file_bytes_f32: int
    file_bytes_int8: int
    lengths: dict[int, LatencyStats]
    iterations: int
    warmup: int
    thread_note: str


def _thread_note() -> str:
    keys = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS")
    parts = [f"{k}={os.environ.get(k, 'unset')}" for k in keys]
    return "single sentence per call; " + ", ".join(parts)


def _stats(samples: list[float]) -> LatencyStats:
    arr = np.asarray(samples, dtype=np.float64)
    return LatencyStats(
        mean_ms=float(arr.mean()),
        std_ms=float(arr.std()),
        min_ms=float(arr.min()),
        max_ms=float(arr.max()),
    )


def _fixed_inputs(vocab_size: int, lengths: tuple[int, ...], seed: int) -> dict[int, np.ndarray]:
    rng = np.random.default_rng(seed)
    hi = max(vocab_size, PAD_ID + 2)
    return {
        n: rng.integers(PAD_ID + 1, hi, size=(1, n), dtype=np.int64) for n in lengths
    }


def _check_bench_args(max_len: int, lengths: tuple[int, ...], iterations: int, warmup: int) -> None:
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    if warmup < 0:
        raise ParameterError("warmup must be >= 0")
    if not lengths:
        raise ParameterError("need at least one length")
    too_long = [n for n in lengths if n > max_len]
    if too_long:
        raise ContractError(f"lengths {too_long} exceed model max_len {max_len}")


def bench_latency(
    frozen: FrozenModel,
    lengths: tuple[int, ...] = DEFAULT_LENGTHS,
    iterations: int = 100,
    warmup: int = 10,
    seed: int = 0,
    name: str | None = None,
) -> CostReport:
    """Wall-clock per-sentence latency of the tape-free path."""
    spec = frozen.spec
    _check_bench_args(spec.max_len, lengths, iterations, warmup)
    inputs = _fixed_inputs(spec.vocab_size, lengths, seed)
    per_length: dict[int, LatencyStats] = {}
    for n in lengths:
        ids = inputs[n]
        for _ in range(warmup):
            frozen.logits(ids)
        samples = []
        for _ in range(iterations):
            t0 = time.perf_counter()
            frozen.logits(ids)
            samples.append((time.perf_counter() - t0) * 1e3)
        per_length[n] = _stats(samples)
    return CostReport(
        model=name or spec.family,
        variant=f"frozen-{frozen.precision}",
        param_count=count_parameters(frozen.model),
        file_bytes_f32=expected_file_bytes(spec, "f32"),
        file_bytes_int8=expected_file_bytes(spec, "int8"),
        lengths=per_length,
        iterations=iterations,
        warmup=warmup,
        thread_note=_thread_note(),
    )


def bench_latency_live(
    model: Model,
    lengths: tuple[int, ...] = DEFAULT_LENGTHS,
    iterations: int = 100,
    warmup: int = 10,
    seed: int = 0,
    name: str | None = None,
) -> CostReport:
    """Same measurement through the training path: an active tape records
    the graph on every call, as it would during a backward-capable step."""
    spec = model.spec
    _check_bench_args(spec.max_len, lengths, iterations, warmup)
    inputs = _fixed_inputs(spec.vocab_size, lengths, seed)
    ones = {n: np.ones((1, n), dtype=np.float32) for n in lengths}
    per_length: dict[int, LatencyStats] = {}
    for n in lengths:
        ids = inputs[n]
        mask = ones[n]
        for _ in range(warmup):
            with Tape():
                forward(model, ids, mask)
        samples = []
        for _ in range(iterations):
            t0 = time.perf_counter()
            with Tape():
                forward(model, ids, mask)
            samples.append((time.perf_counter() - t0) * 1e3)
        per_length[n] = _stats(samples)
    return CostReport(
        model=name or spec.family,
        variant="live",
        param_count=count_parameters(model),
        file_bytes_f32=expected_file_bytes(spec, "f32"),
        file_bytes_int8=expected_file_bytes(spec, "int8"),
        lengths=per_length,
        iterations=iterations,
        warmup=warmup,
        thread_note=_thread_note(),
    )


def _mb(n_bytes: int) -> str:
    return f"{n_bytes / (1024 * 1024):.2f}"


def emit_cost_table(reports: list[CostReport]) -> tuple[str, str]:
    """Render reports as (csv_text, markdown_text).

    CSV: one row per report, per-length mean latency columns. Markdown: one
    row per model with live and frozen latency side by side per length.
    """
    if not reports:
        raise ParameterError("emit_cost_table needs at least one report")
    lengths = sorted({n for r in reports for n in r.lengths})

    cols = ["model", "variant", "params_m", "file_mb_f32", "file_mb_int8"]
    cols += [f"ms_len{n}" for n in lengths]
    rows = [",".join(cols)]
    for r in reports:
        cells = [
            r.model,
            r.variant,
            f"{r.param_count / 1e6:.2f}",
            _mb(r.file_bytes_f32),
            _mb(r.file_bytes_int8),
        ]
        for n in lengths:
            cells.append(f"{r.lengths[n].mean_ms:.3f}" if n in r.lengths else "")
        rows.append(",".join(cells))
    csv_text = "\n".join(rows) + "\n"

    by_model: dict[str, dict[str, CostReport]] = {}
    order: list[str] = []
    for r in reports:
        if r.model not in by_model:
            by_model[r.model] = {}
            order.append(r.model)
        by_model[r.model][r.variant] = r

    header = ["Model", "Params (M)", "File MB (f32)", "File MB (int8)"]
    for n in lengths:
        header += [f"len {n} live (ms)", f"len {n} frozen (ms)"]
    md = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for model in order:
        variants = by_model[model]
        any_r = next(iter(variants.values()))
        live = variants.get("live")
        froz = next((v for k, v in variants.items() if k.startswith("frozen")), None)
        cells = [
            model,
            f"{any_r.param_count / 1e6:.2f}",
            _mb(any_r.file_bytes_f32),
            _mb(any_r.file_bytes_int8),
        ]
        for n in lengths:
            for rep in (live, froz):
                if rep is not None and n in rep.lengths:
                    cells.append(f"{rep.lengths[n].mean_ms:.3f}")
                else:
                    cells.append("")
        md.append("| " + " | ".join(cells) + " |")
    md_text = "\n".join(md) + "\n"
    return csv_text, md_text
