"""Word-vector tables and student embedding initialization.

Tables come from two places: plain-text vector files (optional "count dim"
first line, then one word and its floats per line) and the token-embedding
layer of a trained teacher. Either can seed a student's embedding, provided
the dimensions already agree; there is deliberately no projection fallback,
since a silently projected table would corrupt any convergence comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distill import convergence_steps  # noqa: F401  (re-exported interface)
from .errors import ConfigError, ContractError, FormatError
from .models import Model
from .text import PAD_ID, Vocab

_f32 = np.float32


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for word, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise ContractError(
                    f"vector for {word!r} has shape {vec.shape}, expected ({self.dim},)"
                )

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, word: str) -> bool:
        return word in self.vectors


def _is_header(tokens: list[str]) -> bool:
    if len(tokens) != 2:
        return False
    try:
        int(tokens[0]), int(tokens[1])
    except ValueError:
        return False
    return True


def load_word_vectors(path: str) -> EmbeddingTable:
    """Parse a text vector file. Dim is fixed by the header when present,
    otherwise by the first data line; any later mismatch is a format error
    naming the offending line."""
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if lineno == 1 and _is_header(tokens):
                dim = int(tokens[1])
                if dim < 1:
                    raise FormatError(f"{path}:1: header dim must be >= 1, got {dim}")
                continue
            word, rest = tokens[0], tokens[1:]
            if dim is None:
                dim = len(rest)
                if dim < 1:
                    raise FormatError(f"{path}:{lineno}: no vector components")
            if len(rest) != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} components, got {len(rest)}"
                )
            try:
                vec = np.asarray([float(v) for v in rest], dtype=_f32)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad float ({exc})") from None
            if word in vectors:
                raise FormatError(f"{path}:{lineno}: duplicate word {word!r}")
            vectors[word] = vec
    if dim is None:
        raise FormatError(f"{path}: empty vector file")
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_word_vectors(table: EmbeddingTable, path: str) -> None:
    """Write "count dim" then one word per line. %.8e keeps nine significant
    digits, enough to round-trip f32 exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for word, vec in table.vectors.items():
            comps = " ".join(f"{float(v):.8e}" for v in vec)
            fh.write(f"{word} {comps}\n")


def extract_teacher_embeddings(teacher: Model, vocab: Vocab) -> EmbeddingTable:
    """Token-embedding rows only, one per vocab word; no positional part."""
    token = teacher.params["embed.token"].data
    if token.shape[0] != len(vocab.id_to_word):
        raise ContractError(
            f"teacher vocab rows {token.shape[0]} != vocab size {len(vocab.id_to_word)}"
        )
    vectors = {
        word: token[i].copy() for i, word in enumerate(vocab.id_to_word)
    }
    return EmbeddingTable(dim=int(token.shape[1]), vectors=vectors)


@dataclass
class InitReport:
    copied: int
    oov: int
    oov_fraction: float


def initialize_student_embedding(
    student: Model,
    table: EmbeddingTable,
    vocab: Vocab,
    oov_policy: str = "gaussian",
    seed: int = 0,
) -> InitReport:
    """Overwrite the student's token-embedding rows in place.

    In-table words are copied bit for bit; OOV rows are redrawn N(0, 0.02)
    from the given seed; the PAD row is zeroed. Every row stays trainable.
    Re-applying the same table and seed is a no-op on the result.
    """
    if oov_policy != "gaussian":
        raise ConfigError(f"unknown oov_policy {oov_policy!r}")
    emb = student.params["embed.token"].data
    if emb.shape[1] != table.dim:
        raise ConfigError(
            f"table dim {table.dim} != student embed_dim {emb.shape[1]}; "
            "no projection is performed"
        )
    if emb.shape[0] != len(vocab.id_to_word):
        raise ContractError(
            f"student vocab rows {emb.shape[0]} != vocab size {len(vocab.id_to_word)}"
        )
    rng = np.random.default_rng(seed)
    copied = 0
    for i, word in enumerate(vocab.id_to_word):
        vec = table.vectors.get(word)
        if vec is not None:
            emb[i] = vec
            copied += 1
        else:
            emb[i] = rng.normal(0.0, 0.02, size=table.dim).astype(_f32)
    emb[PAD_ID] = 0.0
    oov = len(vocab.id_to_word) - copied
    return InitReport(
        copied=copied, oov=oov, oov_fraction=oov / len(vocab.id_to_word)
    )
