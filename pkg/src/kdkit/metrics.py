"""F1 metrics for classification and BIO sequence labeling.

Conventions that matter for comparability:
- macro-F1 averages over the declared label set, so a class absent from both
  predictions and golds still contributes an F1 of 0.
- token_macro collapses B-X/I-X to X and keeps O as a class.
- entity F1 is micro over exact (type, start, end) matches; an I- tag that
  opens without a B- (start of sentence, after O, or after a different type)
  is repaired to B- before span extraction.
"""

from __future__ import annotations

from collections.abc import Sequence

from .errors import ContractError, ParameterError


def _prf(tp: int, fp: int, fn: int) -> float:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return 2 * p * r / (p + r) if p + r else 0.0


def macro_f1_classification(preds: Sequence[int], golds: Sequence[int], num_classes: int) -> float:
    if len(preds) != len(golds):
        raise ContractError(f"preds ({len(preds)}) and golds ({len(golds)}) differ in length")
    if num_classes < 1:
        raise ParameterError("num_classes must be >= 1")
    for v in preds:
        if not 0 <= v < num_classes:
            raise ContractError(f"prediction {v} outside [0, {num_classes})")
    for v in golds:
        if not 0 <= v < num_classes:
            raise ContractError(f"gold {v} outside [0, {num_classes})")
    total = 0.0
    for c in range(num_classes):
        tp = sum(1 for p, g in zip(preds, golds) if p == c and g == c)
        fp = sum(1 for p, g in zip(preds, golds) if p == c and g != c)
        fn = sum(1 for p, g in zip(preds, golds) if p != c and g == c)
        total += _prf(tp, fp, fn)
    return total / num_classes


def collapse_tag(tag: str) -> str:
    return tag[2:] if tag.startswith(("B-", "I-")) else tag


def extract_entities(tags: Sequence[str]) -> list[tuple[str, int, int]]:
    """Spans as (type, start, end) with end inclusive, after I-repair."""
    spans = []
    open_type, start = None, -1
    for i, tag in enumerate(tags):
        if tag == "O":
            if open_type is not None:
                spans.append((open_type, start, i - 1))
                open_type = None
            continue
        prefix, etype = tag[:1], tag[2:]
        starts_new = prefix == "B" or open_type is None or etype != open_type
        if starts_new:
            if open_type is not None:
                spans.append((open_type, start, i - 1))
            open_type, start = etype, i
    if open_type is not None:
        spans.append((open_type, start, len(tags) - 1))
    return spans


def seqlab_f1(
    pred_seqs: Sequence[Sequence[int]],
    gold_seqs: Sequence[Sequence[int]],
    label_names: Sequence[str],
    mode: str = "token_macro",
) -> float:
    """F1 over tagged sentences; ids index into label_names.

    token_macro: macro-F1 over collapsed tag classes at token level.
    entity: micro-F1 over exact span matches.
    """
    if mode not in ("token_macro", "entity"):
        raise ParameterError(f"unknown seqlab_f1 mode {mode!r}")
    if len(pred_seqs) != len(gold_seqs):
        raise ContractError("pred and gold sentence counts differ")
    for p, g in zip(pred_seqs, gold_seqs):
        if len(p) != len(g):
            raise ContractError(f"ragged sentence: {len(p)} predicted tags vs {len(g)} gold")
    names = list(label_names)

    if mode == "token_macro":
        classes = sorted({collapse_tag(n) for n in names})
        pred_flat = [collapse_tag(names[t]) for seq in pred_seqs for t in seq]
        gold_flat = [collapse_tag(names[t]) for seq in gold_seqs for t in seq]
        total = 0.0
        for c in classes:
            tp = sum(1 for p, g in zip(pred_flat, gold_flat) if p == c and g == c)
            fp = sum(1 for p, g in zip(pred_flat, gold_flat) if p == c and g != c)
            fn = sum(1 for p, g in zip(pred_flat, gold_flat) if p != c and g == c)
            total += _prf(tp, fp, fn)
        return total / len(classes)

    tp = fp = fn = 0
    for pseq, gseq in zip(pred_seqs, gold_seqs):
        pred_spans = set(extract_entities([names[t] for t in pseq]))
        gold_spans = set(extract_entities([names[t] for t in gseq]))
        tp += len(pred_spans & gold_spans)
        fp += len(pred_spans - gold_spans)
        fn += len(gold_spans - pred_spans)
    return _prf(tp, fp, fn)
