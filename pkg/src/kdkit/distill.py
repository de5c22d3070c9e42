"""Teacher fine-tuning, student distillation, and the staged pipeline.

The pipeline climbs four rungs, each a fresh student trained from scratch:

  vanilla        cross-entropy on gold labels
  kd             distillation against teacher logits on the labeled texts
  kd_ulb         kd plus teacher-pseudo-labeled unlabeled texts
  kd_ulb_embed   kd_ulb with the student embedding initialized from a
                 pretrained table instead of random draws

Early stopping watches dev loss (cross-entropy for supervised runs, distill
loss against the teacher's dev logits for kd runs) with a patience budget;
the best-epoch parameters are restored before returning. Identical config +
seed reproduces identical histories bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import CLASSIFICATION, SEQUENCE_LABELING, Dataset, Example
from .errors import ConfigError, ContractError, ParameterError
from .losses import LOSS_MODES, cross_entropy, distill_loss, hard_labels_from_logits, softmax_np
from .metrics import macro_f1_classification, seqlab_f1
from .models import Model, ModelSpec, build_model, forward
from .optim import OptimizerState, optimizer_step
from .tensor import Tape, backward
from .text import PAD_ID, Vocab

STAGES = ("vanilla", "kd", "kd_ulb", "kd_ulb_embed")

_f32 = np.float32


@dataclass(frozen=True)
class DistillConfig:
    loss_mode: str = "mse"
    temperature: float = 1.0
    lr: float = 1e-3
    optimizer: str = "adam"
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    seed: int = 0
    lr_grid: tuple[float, ...] = (5e-3, 1e-3, 5e-4, 1e-4, 5e-5, 1e-5)

    def __post_init__(self) -> None:
        if self.loss_mode not in LOSS_MODES:
            raise ParameterError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if not (np.isfinite(self.temperature) and self.temperature > 0):
            raise ParameterError(f"temperature must be > 0, got {self.temperature}")
        if not (self.lr > 0 and np.isfinite(self.lr)):
            raise ParameterError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ParameterError("max_epochs must be >= 0")
        if self.patience < 1:
            raise ParameterError("patience must be >= 1")
        if any(not (g > 0 and np.isfinite(g)) for g in self.lr_grid):
            raise ParameterError("lr_grid values must be finite and > 0")


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    best_epoch: int = 0
    steps_to_best: int = 0
    total_steps: int = 0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class SoftTarget:
    """Teacher output for one example: raw logits, T=1 probabilities, and the
    argmax hard label. For sequence labeling, arrays are (L, C) / (L,)."""

    logits: np.ndarray
    probs: np.ndarray
    hard: int | np.ndarray


def convergence_steps(history: TrainHistory) -> int:
    """Optimizer steps taken up to the end of the best epoch."""
    return history.steps_to_best


# ------------------------------------------------------------- encoding

def _encode_items(vocab: Vocab, task: str, items: list, max_len: int) -> list[list[int]]:
    if task == CLASSIFICATION:
        return [vocab.encode_classification(t, max_len) for t in items]
    return [vocab.encode_sequence(toks, max_len) for toks in items]


def _assemble(encs: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(e) for e in encs)
    ids = np.full((len(encs), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(encs), width), dtype=_f32)
    for i, e in enumerate(encs):
        ids[i, : len(e)] = e
        mask[i, : len(e)] = 1.0
    return ids, mask


def _items_of(task: str, examples: list[Example]) -> list:
    return [ex.text for ex in examples] if task == CLASSIFICATION else [ex.tokens for ex in examples]


def _golds_of(task: str, examples: list[Example], max_len: int):
    if task == CLASSIFICATION:
        return [ex.label for ex in examples]
    return [ex.tags[:max_len] for ex in examples]


# ------------------------------------------------------------ inference

def predict(
    model: Model, vocab: Vocab, items: list, task: str, batch_size: int = 64
) -> list:
    """Argmax predictions: ints for classification, tag-id lists (trimmed to
    the encoded length) for sequence labeling."""
    encs = _encode_items(vocab, task, items, model.spec.max_len)
    out = []
    for start in range(0, len(encs), batch_size):
        ids, mask = _assemble(encs[start : start + batch_size])
        logits = forward(model, ids, mask).data
        if task == CLASSIFICATION:
            out.extend(int(i) for i in np.argmax(logits, axis=-1))
        else:
            for row in range(ids.shape[0]):
                n = int(mask[row].sum())
                out.append([int(t) for t in np.argmax(logits[row, :n], axis=-1)])
    return out


def evaluate_f1(model: Model, vocab: Vocab, dataset: Dataset, split: str) -> float:
    """Macro-F1 against gold labels (token_macro for sequence labeling)."""
    examples = dataset.split(split)
    task = dataset.task
    preds = predict(model, vocab, _items_of(task, examples), task)
    golds = _golds_of(task, examples, model.spec.max_len)
    if task == CLASSIFICATION:
        return macro_f1_classification(preds, golds, dataset.num_classes)
    return seqlab_f1(preds, golds, dataset.label_names, mode="token_macro")


def teacher_logits(
    teacher: Model, vocab: Vocab, items: list, task: str, batch_size: int = 64
) -> list[SoftTarget]:
    """Teacher targets for a list of texts/token-lists; computed once,
    deterministic for a fixed teacher."""
    encs = _encode_items(vocab, task, items, teacher.spec.max_len)
    targets: list[SoftTarget] = []
    for start in range(0, len(encs), batch_size):
        ids, mask = _assemble(encs[start : start + batch_size])
        logits = forward(teacher, ids, mask).data
        for row in range(ids.shape[0]):
            if task == CLASSIFICATION:
                z = logits[row].copy()
            else:
                n = int(mask[row].sum())
                z = logits[row, :n].copy()
            targets.append(
                SoftTarget(logits=z, probs=softmax_np(z), hard=hard_labels_from_logits(z))
            )
    return targets


# ------------------------------------------------------------- training

def _snapshot(model: Model) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in model.params.items()}


def _restore(model: Model, snap: dict[str, np.ndarray]) -> None:
    for k, t in model.params.items():
        t.data = snap[k].copy()


def _fit(
    model: Model,
    cfg: DistillConfig,
    n_items: int,
    batch_loss_fn,
    val_loss_fn,
    val_f1_fn,
) -> TrainHistory:
    """Shared epoch loop: seeded shuffling, early stopping on val loss,
    best-epoch restore. batch_loss_fn(indices, rng) must build the train-mode
    loss under the active tape."""
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState(cfg.optimizer, cfg.lr)
    hist = TrainHistory()
    best = _snapshot(model)
    best_loss = math.inf
    steps = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(n_items)
        losses = []
        for start in range(0, n_items, cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            with Tape() as tape:
                loss = batch_loss_fn(chunk, rng)
            grads = backward(tape, loss)
            by_name = {
                name: grads[t] for name, t in model.params.items() if t in grads
            }
            optimizer_step(opt, model.params, by_name)
            steps += 1
            losses.append(loss.item())
        hist.train_loss.append(float(np.mean(losses)))
        vl = val_loss_fn()
        hist.val_loss.append(vl)
        hist.val_f1.append(val_f1_fn())
        if vl < best_loss:
            best_loss = vl
            hist.best_epoch = epoch
            hist.steps_to_best = steps
            best = _snapshot(model)
        if epoch - hist.best_epoch >= cfg.patience:
            break
    hist.total_steps = steps
    _restore(model, best)
    return hist


def _train_supervised(
    model: Model, vocab: Vocab, dataset: Dataset, cfg: DistillConfig
) -> TrainHistory:
    task = dataset.task
    train = dataset.split("train")
    dev = dataset.split("dev")
    max_len = model.spec.max_len
    encs = _encode_items(vocab, task, _items_of(task, train), max_len)
    if task == CLASSIFICATION:
        labels = np.asarray([ex.label for ex in train], dtype=np.int64)
    else:
        tag_rows = [np.asarray(ex.tags[:max_len], dtype=np.int64) for ex in train]
    dev_encs = _encode_items(vocab, task, _items_of(task, dev), max_len)

    def batch_loss(chunk, rng):
        ids, mask = _assemble([encs[i] for i in chunk])
        logits = forward(model, ids, mask, train=True, rng=rng)
        if task == CLASSIFICATION:
            return cross_entropy(logits, labels[chunk])
        width = ids.shape[1]
        lab = np.zeros((len(chunk), width), dtype=np.int64)
        for r, i in enumerate(chunk):
            lab[r, : len(tag_rows[i])] = tag_rows[i]
        return cross_entropy(logits, lab, pad_mask=mask)

    def val_loss():
        total, count = 0.0, 0
        for start in range(0, len(dev_encs), 64):
            batch = dev_encs[start : start + 64]
            ids, mask = _assemble(batch)
            logits = forward(model, ids, mask)
            if task == CLASSIFICATION:
                lab = np.asarray([dev[start + r].label for r in range(len(batch))], dtype=np.int64)
                loss = cross_entropy(logits, lab)
                n = len(batch)
            else:
                width = ids.shape[1]
                lab = np.zeros((len(batch), width), dtype=np.int64)
                for r in range(len(batch)):
                    tags = dev[start + r].tags[:max_len]
                    lab[r, : len(tags)] = tags
                loss = cross_entropy(logits, lab, pad_mask=mask)
                n = int(mask.sum())
            total += loss.item() * n
            count += n
        return total / count

    return _fit(
        model, cfg, len(encs), batch_loss, val_loss,
        lambda: evaluate_f1(model, vocab, dataset, "dev"),
    )


def fine_tune_teacher(
    spec: ModelSpec, dataset: Dataset, vocab: Vocab, cfg: DistillConfig
) -> tuple[Model, TrainHistory]:
    """Cross-entropy fine-tuning with early stopping; returns the best-epoch
    model. With max_epochs=0 the initialized model comes back untouched."""
    model = build_model(spec, seed=cfg.seed)
    hist = _train_supervised(model, vocab, dataset, cfg)
    return model, hist


def train_vanilla(
    student_spec: ModelSpec, dataset: Dataset, vocab: Vocab, cfg: DistillConfig
) -> tuple[Model, TrainHistory]:
    """The no-teacher baseline: same loop as the teacher, student-sized."""
    model = build_model(student_spec, seed=cfg.seed)
    hist = _train_supervised(model, vocab, dataset, cfg)
    return model, hist


def train_student(
    student: Model,
    vocab: Vocab,
    items: list,
    targets: list[SoftTarget],
    dev_items: list,
    dev_targets: list[SoftTarget],
    task: str,
    cfg: DistillConfig,
    dataset_for_f1: Dataset | None = None,
) -> TrainHistory:
    """Distill `student` against fixed teacher targets.

    items/targets are the training pool; dev loss is the distill loss against
    the teacher's dev targets. Teacher and student must have encoded each
    item to the same length, otherwise per-position targets cannot align.
    """
    if len(items) != len(targets):
        raise ContractError(f"{len(items)} items vs {len(targets)} targets")
    if len(dev_items) != len(dev_targets):
        raise ContractError("dev items/targets length mismatch")
    max_len = student.spec.max_len
    encs = _encode_items(vocab, task, items, max_len)
    dev_encs = _encode_items(vocab, task, dev_items, max_len)
    n_classes = student.spec.num_classes
    if task == SEQUENCE_LABELING:
        for e, t in zip(encs, targets):
            if len(e) != t.logits.shape[0]:
                raise ContractError(
                    "teacher target length does not match the student encoding; "
                    "teacher and student must share max_len"
                )

    def stack_targets(chunk, width):
        if task == CLASSIFICATION:
            return np.stack([targets[i].logits for i in chunk])
        out = np.zeros((len(chunk), width, n_classes), dtype=_f32)
        for r, i in enumerate(chunk):
            out[r, : targets[i].logits.shape[0]] = targets[i].logits
        return out

    def batch_loss(chunk, rng):
        ids, mask = _assemble([encs[i] for i in chunk])
        logits = forward(student, ids, mask, train=True, rng=rng)
        t = stack_targets(chunk, ids.shape[1])
        pm = mask if task == SEQUENCE_LABELING else None
        return distill_loss(logits, t, mode=cfg.loss_mode, temperature=cfg.temperature, pad_mask=pm)

    def val_loss():
        total, count = 0.0, 0
        for start in range(0, len(dev_encs), 64):
            batch_idx = list(range(start, min(start + 64, len(dev_encs))))
            ids, mask = _assemble([dev_encs[i] for i in batch_idx])
            logits = forward(student, ids, mask)
            if task == CLASSIFICATION:
                t = np.stack([dev_targets[i].logits for i in batch_idx])
                loss = distill_loss(logits, t, mode=cfg.loss_mode, temperature=cfg.temperature)
                n = len(batch_idx)
            else:
                t = np.zeros((len(batch_idx), ids.shape[1], n_classes), dtype=_f32)
                for r, i in enumerate(batch_idx):
                    t[r, : dev_targets[i].logits.shape[0]] = dev_targets[i].logits
                loss = distill_loss(
                    logits, t, mode=cfg.loss_mode, temperature=cfg.temperature, pad_mask=mask
                )
                n = int(mask.sum())
            total += loss.item() * n
            count += n
        return total / count

    if dataset_for_f1 is not None:
        val_f1 = lambda: evaluate_f1(student, vocab, dataset_for_f1, "dev")  # noqa: E731
    else:
        val_f1 = lambda: 0.0  # noqa: E731
    return _fit(student, cfg, len(encs), batch_loss, val_loss, val_f1)


# -------------------------------------------------------------- pipeline

@dataclass
class StageResult:
    model: str
    stage: str
    loss_mode: str
    lr: float
    seed: int
    dev_f1: float
    test_f1: float
    best_epoch: int
    steps_to_best: int


def run_pipeline(
    stage: str,
    dataset: Dataset,
    vocab: Vocab,
    student_spec: ModelSpec,
    cfg: DistillConfig,
    teacher: Model | None = None,
    pool_texts: list[str] | None = None,
    embedding_table=None,
) -> tuple[Model, TrainHistory, StageResult]:
    """Run one pipeline stage for one student spec and report gold-label F1.

    Stage prerequisites are configuration errors when missing: kd* stages
    need a teacher, kd_ulb* a pool, kd_ulb_embed an embedding table.
    """
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}, expected one of {STAGES}")
    task = dataset.task

    if stage == "vanilla":
        model, hist = train_vanilla(student_spec, dataset, vocab, cfg)
    else:
        if teacher is None:
            raise ConfigError(f"stage {stage!r} requires a teacher")
        items = _items_of(task, dataset.split("train"))
        if stage in ("kd_ulb", "kd_ulb_embed"):
            if pool_texts is None:
                raise ConfigError(f"stage {stage!r} requires an unlabeled pool")
            extra = [t if task == CLASSIFICATION else t.split() for t in pool_texts]
            items = items + extra
        model = build_model(student_spec, seed=cfg.seed)
        if stage == "kd_ulb_embed":
            if embedding_table is None:
                raise ConfigError("stage 'kd_ulb_embed' requires an embedding table")
            from .embeddings import initialize_student_embedding

            initialize_student_embedding(model, embedding_table, vocab, seed=cfg.seed)
        targets = teacher_logits(teacher, vocab, items, task)
        dev_items = _items_of(task, dataset.split("dev"))
        dev_targets = teacher_logits(teacher, vocab, dev_items, task)
        hist = train_student(
            model, vocab, items, targets, dev_items, dev_targets, task, cfg,
            dataset_for_f1=dataset,
        )

    dev_f1 = evaluate_f1(model, vocab, dataset, "dev")
    test_f1 = evaluate_f1(model, vocab, dataset, "test")
    row = StageResult(
        model=student_spec.family,
        stage=stage,
        loss_mode="ce" if stage == "vanilla" else cfg.loss_mode,
        lr=cfg.lr,
        seed=cfg.seed,
        dev_f1=dev_f1,
        test_f1=test_f1,
        best_epoch=hist.best_epoch,
        steps_to_best=hist.steps_to_best,
    )
    return model, hist, row


# ------------------------------------------------------------- lr search

@dataclass
class LrTrial:
    lr: float
    dev_f1: float


@dataclass
class LrSearchResult:
    trials: list[LrTrial]
    best_lr: float
    best_dev_f1: float


def lr_random_search(
    train_eval_fn,
    trials: int,
    lo: float = 5e-5,
    hi: float = 1e-2,
    seed: int = 0,
) -> LrSearchResult:
    """Log-uniform random search. train_eval_fn(lr) -> dev F1. Ties keep the
    earliest trial. Deterministic for a fixed seed."""
    if trials < 1:
        raise ParameterError("trials must be >= 1")
    if not (0 < lo < hi):
        raise ParameterError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    rng = np.random.default_rng(seed)
    lrs = np.exp(rng.uniform(math.log(lo), math.log(hi), size=trials))
    out = [LrTrial(lr=float(lr), dev_f1=float(train_eval_fn(float(lr)))) for lr in lrs]
    best = max(range(len(out)), key=lambda i: (out[i].dev_f1, -i))
    return LrSearchResult(trials=out, best_lr=out[best].lr, best_dev_f1=out[best].dev_f1)


def lr_grid_search(train_eval_fn, grid: tuple[float, ...]) -> LrSearchResult:
    """Evaluate a fixed grid in order; ties keep the earliest entry."""
    if not grid:
        raise ParameterError("empty lr grid")
    out = [LrTrial(lr=float(lr), dev_f1=float(train_eval_fn(float(lr)))) for lr in grid]
    best = max(range(len(out)), key=lambda i: (out[i].dev_f1, -i))
    return LrSearchResult(trials=out, best_lr=out[best].lr, best_dev_f1=out[best].dev_f1)
