"""Whitespace tokenizer and vocabulary.

Token ids 0-3 are reserved: [PAD]=0, [UNK]=1, [CLS]=2, [SEP]=3. Classification
encodings are [CLS] + tokens + [SEP]; sequence-labeling encodings are the raw
tokens (one tag per position), both truncated to max_len.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .errors import ContractError, ParameterError

PAD_ID = 0
UNK_ID = 1
CLS_ID = 2
SEP_ID = 3
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")


def tokenize(text: str) -> list[str]:
    return text.split()


def normalize_ws(text: str) -> str:
    """Collapse runs of whitespace; the notion of text equality for dedupe."""
    return " ".join(text.split())


@dataclass
class Vocab:
    id_to_word: list[str]
    word_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if list(self.id_to_word[:4]) != list(SPECIAL_TOKENS):
            raise ContractError("vocab must start with [PAD], [UNK], [CLS], [SEP]")
        if not self.word_to_id:
            self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ContractError("duplicate words in vocab")

    def __len__(self) -> int:
        return len(self.id_to_word)

    @classmethod
    def build(cls, token_seqs: list[list[str]], min_count: int = 1) -> "Vocab":
        """Vocabulary from token sequences, most frequent first; ties break
        lexicographically so identical corpora give identical vocabs."""
        counts = Counter()
        for seq in token_seqs:
            counts.update(seq)
        for special in SPECIAL_TOKENS:
            counts.pop(special, None)
        kept = sorted(
            (w for w, c in counts.items() if c >= min_count),
            key=lambda w: (-counts[w], w),
        )
        return cls(id_to_word=list(SPECIAL_TOKENS) + kept)

    @classmethod
    def build_from_texts(cls, texts: list[str], min_count: int = 1) -> "Vocab":
        return cls.build([tokenize(t) for t in texts], min_count=min_count)

    def encode_words(self, words: list[str]) -> list[int]:
        get = self.word_to_id.get
        return [get(w, UNK_ID) for w in words]

    def encode_classification(self, text: str, max_len: int) -> list[int]:
        """[CLS] + tokens + [SEP], truncated to max_len (CLS always survives)."""
        if max_len < 2:
            raise ParameterError(f"max_len must be >= 2 for classification, got {max_len}")
        ids = self.encode_words(tokenize(text))
        return [CLS_ID] + ids[: max_len - 2] + [SEP_ID]

    def encode_sequence(self, tokens: list[str], max_len: int) -> list[int]:
        if max_len < 1:
            raise ParameterError(f"max_len must be >= 1, got {max_len}")
        if not tokens:
            raise ContractError("cannot encode an empty token sequence")
        return self.encode_words(tokens)[:max_len]
