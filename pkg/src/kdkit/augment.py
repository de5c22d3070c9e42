"""Unlabeled-pool construction, pseudo-labeling, balancing, length filtering.

Pools are plain text collections tagged with the dataset they came from.
Labels never travel with the pool: the teacher re-derives them, which is the
whole point of training on text the annotators never saw.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import CLASSIFICATION, Dataset
from .distill import SoftTarget, teacher_logits
from .errors import ContractError, ParameterError
from .models import Model
from .text import Vocab, normalize_ws, tokenize

BALANCE_STRATEGIES = ("median_cap", "target_oversample")
LENGTH_FILTER_MODES = ("min_max", "q1_q3")


@dataclass
class UnlabeledPool:
    texts: list[str] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.texts) != len(self.sources):
            raise ContractError(
                f"{len(self.texts)} texts vs {len(self.sources)} source tags"
            )

    def __len__(self) -> int:
        return len(self.texts)


@dataclass
class PseudoLabeledSet:
    texts: list[str]
    targets: list[SoftTarget]
    sources: list[str]

    def __post_init__(self) -> None:
        if not (len(self.texts) == len(self.targets) == len(self.sources)):
            raise ContractError("texts, targets, and sources must be parallel")

    def __len__(self) -> int:
        return len(self.texts)


@dataclass
class PoolStats:
    counts: dict[int, int]
    std: float
    total: int


@dataclass
class LengthStats:
    mean: float
    std: float
    min: int
    q1: int
    q3: int
    max: int


def merge_pools(datasets: list[Dataset]) -> UnlabeledPool:
    """Union of all train-split texts with labels discarded.

    Duplicates (exact match after whitespace normalization) keep the first
    occurrence and its source tag; order follows the input datasets.
    """
    if not datasets:
        raise ParameterError("merge_pools needs at least one dataset")
    texts: list[str] = []
    sources: list[str] = []
    seen: set[str] = set()
    for ds in datasets:
        for raw in ds.all_train_texts():
            text = normalize_ws(raw)
            if not text or text in seen:
                continue
            seen.add(text)
            texts.append(text)
            sources.append(ds.name)
    return UnlabeledPool(texts=texts, sources=sources)


def save_pool(pool: UnlabeledPool, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for text in pool.texts:
            fh.write(text + "\n")


def load_pool(path: str, source: str = "file") -> UnlabeledPool:
    texts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            text = normalize_ws(line)
            if text:
                texts.append(text)
    return UnlabeledPool(texts=texts, sources=[source] * len(texts))


def pseudo_label(
    teacher: Model, pool: UnlabeledPool, vocab: Vocab, task: str
) -> PseudoLabeledSet:
    """Teacher targets for every pool text; a pure function of the teacher
    parameters and the texts."""
    if task == CLASSIFICATION:
        items: list = list(pool.texts)
    else:
        items = [tokenize(t) for t in pool.texts]
    targets = teacher_logits(teacher, vocab, items, task)
    return PseudoLabeledSet(
        texts=list(pool.texts), targets=targets, sources=list(pool.sources)
    )


def _hard_label_list(pls: PseudoLabeledSet) -> list[int]:
    labels: list[int] = []
    for t in pls.targets:
        if np.ndim(t.hard) == 0:
            labels.append(int(t.hard))
        else:
            labels.extend(int(v) for v in np.asarray(t.hard).ravel())
    return labels


def pool_stats(pls: PseudoLabeledSet) -> PoolStats:
    """Per-label counts from teacher hard labels (per token for sequence
    labeling) plus the population std of the count vector."""
    if len(pls) == 0:
        raise ContractError("pool_stats needs a non-empty set")
    labels = _hard_label_list(pls)
    counts: dict[int, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    vec = np.asarray(sorted(counts.values()), dtype=np.float64)
    return PoolStats(
        counts=dict(sorted(counts.items())),
        std=float(np.std(vec)),
        total=len(labels),
    )


def balance_pool(
    pls: PseudoLabeledSet,
    strategy: str,
    n: int | None = None,
    seed: int = 0,
    num_classes: int | None = None,
) -> PseudoLabeledSet:
    """Rebalance a classification pseudo-labeled set by teacher hard label.

    median_cap subsamples every over-represented label down to the median
    count; under-represented labels pass through untouched, so no label ever
    disappears. target_oversample(n) resamples every label to exactly n items
    (whole copies plus a seeded remainder draw), leaving per-label std 0.
    """
    if strategy not in BALANCE_STRATEGIES:
        raise ParameterError(
            f"strategy must be one of {BALANCE_STRATEGIES}, got {strategy!r}"
        )
    if any(np.ndim(t.hard) != 0 for t in pls.targets):
        raise ContractError("balance_pool applies to classification sets only")
    by_label: dict[int, list[int]] = {}
    for i, t in enumerate(pls.targets):
        by_label.setdefault(int(t.hard), []).append(i)
    if num_classes is not None:
        missing = [c for c in range(num_classes) if c not in by_label]
        if missing:
            raise ContractError(f"no pool items with teacher label(s) {missing}")
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    if strategy == "median_cap":
        cap = int(np.median([len(v) for v in by_label.values()]))
        for label in sorted(by_label):
            idx = by_label[label]
            if len(idx) > cap:
                pick = rng.choice(len(idx), size=cap, replace=False)
                idx = [idx[j] for j in sorted(pick)]
            keep.extend(idx)
    else:
        if n is None or n < 1:
            raise ParameterError("target_oversample needs n >= 1")
        for label in sorted(by_label):
            idx = by_label[label]
            full, rem = divmod(n, len(idx))
            keep.extend(idx * full)
            if rem:
                pick = rng.choice(len(idx), size=rem, replace=False)
                keep.extend(idx[j] for j in sorted(pick))
    return PseudoLabeledSet(
        texts=[pls.texts[i] for i in keep],
        targets=[pls.targets[i] for i in keep],
        sources=[pls.sources[i] for i in keep],
    )


def _nearest_rank(sorted_vals: list[int], q: float) -> int:
    n = len(sorted_vals)
    rank = int(np.ceil(q * n))
    return sorted_vals[max(rank, 1) - 1]


def length_stats(texts: list[str], tokenizer=tokenize) -> LengthStats:
    """Token-count statistics with nearest-rank quartiles."""
    if not texts:
        raise ContractError("length_stats needs a non-empty pool")
    lengths = sorted(len(tokenizer(t)) for t in texts)
    arr = np.asarray(lengths, dtype=np.float64)
    return LengthStats(
        mean=float(arr.mean()),
        std=float(arr.std()),
        min=int(lengths[0]),
        q1=_nearest_rank(lengths, 0.25),
        q3=_nearest_rank(lengths, 0.75),
        max=int(lengths[-1]),
    )


def filter_by_length(
    pool: UnlabeledPool, mode: str, ref: LengthStats, tokenizer=tokenize
) -> UnlabeledPool:
    """Keep texts whose token count falls inside the reference band,
    inclusive on both ends. An empty result is legal."""
    if mode not in LENGTH_FILTER_MODES:
        raise ParameterError(
            f"mode must be one of {LENGTH_FILTER_MODES}, got {mode!r}"
        )
    lo, hi = (ref.min, ref.max) if mode == "min_max" else (ref.q1, ref.q3)
    texts, sources = [], []
    for text, src in zip(pool.texts, pool.sources):
        if lo <= len(tokenizer(text)) <= hi:
            texts.append(text)
            sources.append(src)
    return UnlabeledPool(texts=texts, sources=sources)
