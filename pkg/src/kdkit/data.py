"""Datasets: CSV/CoNLL loaders, synthetic task generators, batch encoding.

Two tasks exist. Classification examples carry (text, label); sequence
labeling examples carry (tokens, tags) with exactly one tag per token.
Label vocabularies are sorted lexicographically so reloading the same files
always yields the same id assignment.
"""

from __future__ import annotations

import csv
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ParameterError
from .text import CLS_ID, PAD_ID, SEP_ID, Vocab, tokenize

CLASSIFICATION = "classification"
SEQUENCE_LABELING = "sequence_labeling"
TASKS = (CLASSIFICATION, SEQUENCE_LABELING)

_TAG_RE = re.compile(r"^(O|[BI]-.+)$")


@dataclass
class Example:
    text: str | None = None
    label: int | None = None
    tokens: list[str] | None = None
    tags: list[int] | None = None


@dataclass
class Dataset:
    name: str
    task: str
    label_names: list[str]
    splits: dict[str, list[Example]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.task not in TASKS:
            raise ParameterError(f"unknown task {self.task!r}")

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def split(self, name: str) -> list[Example]:
        if name not in self.splits:
            raise ContractError(f"dataset {self.name!r} has no split {name!r}")
        return self.splits[name]

    def all_train_texts(self) -> list[str]:
        out = []
        for ex in self.split("train"):
            out.append(ex.text if self.task == CLASSIFICATION else " ".join(ex.tokens))
        return out


# ---------------------------------------------------------------- loaders

def load_classification_csv(
    train: str | Path, dev: str | Path, test: str | Path, name: str = "csv"
) -> Dataset:
    """Each file: header `text,label`, one example per row. The label id
    assignment is the sorted union of labels across all three splits."""
    raw: dict[str, list[tuple[str, str]]] = {}
    labels: set[str] = set()
    for split, path in (("train", train), ("dev", dev), ("test", test)):
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["text", "label"]:
                raise FormatError(f"{path}: expected header 'text,label', got {header}")
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 2:
                    raise FormatError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
                text, label = row
                if not text.strip():
                    raise FormatError(f"{path}: line {lineno}: empty text")
                if not label.strip():
                    raise FormatError(f"{path}: line {lineno}: empty label")
                rows.append((text, label))
                labels.add(label)
        raw[split] = rows
    label_names = sorted(labels)
    label_id = {l: i for i, l in enumerate(label_names)}
    splits = {
        s: [Example(text=t, label=label_id[l]) for t, l in rows]
        for s, rows in raw.items()
    }
    return Dataset(name=name, task=CLASSIFICATION, label_names=label_names, splits=splits)


def save_classification_csv(dataset: Dataset, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for split, examples in dataset.splits.items():
        p = out_dir / f"{split}.csv"
        with open(p, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["text", "label"])
            for ex in examples:
                writer.writerow([ex.text, dataset.label_names[ex.label]])
        paths.append(p)
    return paths


def load_conll(
    train: str | Path, dev: str | Path, test: str | Path, name: str = "conll"
) -> Dataset:
    """token<TAB>tag lines, blank line between sentences. Tags must be O or
    B-/I- prefixed; an I- with no matching open span is accepted here and
    repaired at metric time."""
    raw: dict[str, list[tuple[list[str], list[str]]]] = {}
    tag_names: set[str] = set()
    for split, path in (("train", train), ("dev", dev), ("test", test)):
        sents = []
        toks: list[str] = []
        tags: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line.strip():
                    if toks:
                        sents.append((toks, tags))
                        toks, tags = [], []
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0]:
                    raise FormatError(f"{path}: line {lineno}: expected 'token<TAB>tag'")
                if not _TAG_RE.match(parts[1]):
                    raise FormatError(f"{path}: line {lineno}: bad tag {parts[1]!r}")
                toks.append(parts[0])
                tags.append(parts[1])
                tag_names.add(parts[1])
        if toks:
            sents.append((toks, tags))
        raw[split] = sents
    label_names = sorted(tag_names)
    tag_id = {t: i for i, t in enumerate(label_names)}
    splits = {
        s: [Example(tokens=tk, tags=[tag_id[t] for t in tg]) for tk, tg in sents]
        for s, sents in raw.items()
    }
    return Dataset(name=name, task=SEQUENCE_LABELING, label_names=label_names, splits=splits)


def save_conll(dataset: Dataset, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for split, examples in dataset.splits.items():
        p = out_dir / f"{split}.conll"
        with open(p, "w", encoding="utf-8") as fh:
            for ex in examples:
                for tok, tag in zip(ex.tokens, ex.tags):
                    fh.write(f"{tok}\t{dataset.label_names[tag]}\n")
                fh.write("\n")
        paths.append(p)
    return paths


def dataset_content_hash(dataset: Dataset) -> str:
    """Stable sha256 over the examples, for result-row provenance."""
    h = hashlib.sha256()
    h.update(dataset.task.encode())
    h.update("\x1f".join(dataset.label_names).encode())
    for split in sorted(dataset.splits):
        h.update(split.encode())
        for ex in dataset.splits[split]:
            if dataset.task == CLASSIFICATION:
                h.update(f"{ex.text}\x1f{ex.label}\x1e".encode())
            else:
                h.update(("\x1f".join(ex.tokens) + "\x1f" + ",".join(map(str, ex.tags)) + "\x1e").encode())
    return h.hexdigest()


# ------------------------------------------------------- synthetic tasks

def synth_classification(
    seed: int,
    n_train: int = 240,
    n_dev: int = 60,
    n_test: int = 120,
    n_classes: int = 3,
    vocab_size: int = 60,
    length_range: tuple[int, int] = (3, 9),
    noise: float = 0.3,
    name: str = "synth-cls",
) -> Dataset:
    """Marker-word classification task.

    Class c owns marker words "c<c>w<k>"; shared noise words are "x<j>". Each
    text of class c draws round(len*(1-noise)) tokens (at least one) from
    class-c markers and the rest from the union of noise words and all marker
    words. At noise=0 every token is an own-class marker, so counting markers
    classifies perfectly; raising noise lowers the attainable accuracy.
    Splits never share a text (collisions are re-rolled), class labels cycle
    so the split label counts stay within one example of uniform.
    """
    if not (0.0 <= noise < 1.0):
        raise ParameterError(f"noise must be in [0,1), got {noise}")
    if n_classes < 2:
        raise ParameterError("need at least 2 classes")
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ParameterError(f"bad length_range {length_range}")
    per_class = max(2, vocab_size // (2 * n_classes))
    markers = [[f"c{c}w{k}" for k in range(per_class)] for c in range(n_classes)]
    n_noise_words = max(1, vocab_size - n_classes * per_class)
    noise_words = [f"x{j}" for j in range(n_noise_words)]
    distractors = noise_words + [w for ms in markers for w in ms]
    rng = np.random.default_rng(seed)
    seen: set[str] = set()

    def make(c: int) -> str:
        while True:
            ln = int(rng.integers(lo, hi + 1))
            n_own = max(1, ln - int(round(ln * noise)))
            words = [markers[c][int(i)] for i in rng.integers(0, per_class, n_own)]
            words += [distractors[int(i)] for i in rng.integers(0, len(distractors), ln - n_own)]
            perm = rng.permutation(len(words))
            text = " ".join(words[int(i)] for i in perm)
            if text not in seen:
                seen.add(text)
                return text

    splits = {}
    for split, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        splits[split] = [Example(text=make(i % n_classes), label=i % n_classes) for i in range(n)]
    return Dataset(
        name=name,
        task=CLASSIFICATION,
        label_names=[f"class{c}" for c in range(n_classes)],
        splits=splits,
    )


def synth_sequence_labeling(
    seed: int,
    n_train: int = 200,
    n_dev: int = 50,
    n_test: int = 100,
    n_types: int = 2,
    length_range: tuple[int, int] = (5, 12),
    noise: float = 0.1,
    lexicon_size: int = 8,
    name: str = "synth-seq",
) -> Dataset:
    """BIO tagging task with type-specific lexicons.

    Entities are 1-3 consecutive words from the lexicon of one type (words
    "e<t>w<k>"); filler words "f<j>" are never entity words. Entities are
    separated by at least one filler, so at noise=0 a longest-run lexicon
    lookup reconstructs the gold spans exactly. With noise > 0, an entity
    token keeps its tag but is swapped for a filler word with that
    probability (label noise).
    """
    if not (0.0 <= noise < 1.0):
        raise ParameterError(f"noise must be in [0,1), got {noise}")
    lo, hi = length_range
    if lo < 4 or hi < lo:
        raise ParameterError(f"bad length_range {length_range} (min length 4)")
    lex = [[f"e{t}w{k}" for k in range(lexicon_size)] for t in range(n_types)]
    fillers = [f"f{j}" for j in range(3 * lexicon_size)]
    tag_names = sorted(
        [f"B-T{t}" for t in range(n_types)] + [f"I-T{t}" for t in range(n_types)] + ["O"]
    )
    tag_id = {t: i for i, t in enumerate(tag_names)}
    rng = np.random.default_rng(seed)
    seen: set[str] = set()

    def make() -> tuple[list[str], list[int]]:
        while True:
            ln = int(rng.integers(lo, hi + 1))
            k = int(rng.choice([0, 1, 2], p=[0.2, 0.5, 0.3]))
            ent_lens = [int(rng.integers(1, 4)) for _ in range(k)]
            while k and sum(ent_lens) + (k - 1) > ln:
                k -= 1
                ent_lens = ent_lens[:k]
            toks: list[str] = []
            tags: list[int] = []
            filler_budget = ln - sum(ent_lens)
            # k+1 filler slots; the k-1 interior slots get at least one filler
            slots = [0] * (k + 1)
            for s in range(1, k):
                slots[s] = 1
                filler_budget -= 1
            for _ in range(filler_budget):
                slots[int(rng.integers(0, k + 1))] += 1
            for s in range(k + 1):
                for _ in range(slots[s]):
                    toks.append(fillers[int(rng.integers(0, len(fillers)))])
                    tags.append(tag_id["O"])
                if s < k:
                    t = int(rng.integers(0, n_types))
                    words = [lex[t][int(i)] for i in rng.integers(0, lexicon_size, ent_lens[s])]
                    for j, w in enumerate(words):
                        if noise > 0 and rng.random() < noise:
                            w = fillers[int(rng.integers(0, len(fillers)))]
                        toks.append(w)
                        tags.append(tag_id[f"B-T{t}" if j == 0 else f"I-T{t}"])
            key = " ".join(toks)
            if key not in seen:
                seen.add(key)
                return toks, tags

    splits = {}
    for split, n in (("train", n_train), ("dev", n_dev), ("test", n_test)):
        split_examples = []
        for _ in range(n):
            toks, tags = make()
            split_examples.append(Example(tokens=toks, tags=tags))
        splits[split] = split_examples
    return Dataset(name=name, task=SEQUENCE_LABELING, label_names=tag_names, splits=splits)


# --------------------------------------------------------- batch encoding

def encode_batch(
    vocab: Vocab,
    task: str,
    items: list,
    max_len: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Encode texts (classification) or token lists (sequence labeling) into
    padded (B, L) int64 ids and a float32 (B, L) non-pad mask. L is the
    longest encoding in the batch, never more than max_len."""
    if task == CLASSIFICATION:
        encs = [vocab.encode_classification(t, max_len) for t in items]
    elif task == SEQUENCE_LABELING:
        encs = [vocab.encode_sequence(toks, max_len) for toks in items]
    else:
        raise ParameterError(f"unknown task {task!r}")
    if not encs:
        raise ContractError("empty batch")
    width = max(len(e) for e in encs)
    ids = np.full((len(encs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(encs), width), dtype=np.float32)
    for i, e in enumerate(encs):
        ids[i, : len(e)] = e
        mask[i, : len(e)] = 1.0
    return ids, mask
