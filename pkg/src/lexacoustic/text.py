"""Tokenizer, vocabulary, embedding table and the question-mark transform."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .io_utils import atomic_write_text

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
QMARK = "?"
DEFAULT_MAX_LEN = 100

_TRAILING = re.compile(r"^(.*?)([.,!]*)$", re.S)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, break out ``?`` and trailing ``. , !``."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        pieces = chunk.split(QMARK)
        for k, piece in enumerate(pieces):
            if piece:
                word, punct = _TRAILING.match(piece).groups()
                if word:
                    tokens.append(word)
                tokens.extend(punct)
            if k < len(pieces) - 1:
                tokens.append(QMARK)
    return tokens


class Vocabulary:
    """Token <-> id map with PAD = 0 and UNK = 1 reserved."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos = [PAD, UNK]
        self.stoi = {PAD: PAD_ID, UNK: UNK_ID}
        for tok in tokens:
            if tok in self.stoi:
                raise ValueError(f"duplicate vocabulary token {tok!r}")
            self.stoi[tok] = len(self.itos)
            self.itos.append(tok)

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def save(self, path) -> None:
        atomic_write_text(path, "".join(t + "\n" for t in self.itos[2:]))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.splitlines())


def build_vocab(token_lists: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Ids by descending frequency, ties broken lexicographically."""
    counts = Counter(t for toks in token_lists for t in toks)
    kept = [t for t, c in counts.items() if c >= min_count and t not in (PAD, UNK)]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    trainable: bool = True

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def save(self, path, vocab: Vocabulary) -> None:
        lines = [f"{len(vocab)} {self.dim}"]
        for tok, row in zip(vocab.itos, self.vectors):
            lines.append(tok + " " + " ".join(repr(float(v)) for v in row))
        atomic_write_text(path, "\n".join(lines) + "\n")


def random_embeddings(vocab_size: int, dim: int, seed: int) -> np.ndarray:
    table = np.random.default_rng(seed).uniform(-0.25, 0.25, size=(vocab_size, dim))
    table[PAD_ID] = 0.0
    return table


def load_embeddings(path, vocab: Vocabulary, dim: int = 300, seed: int = 0) -> EmbeddingTable:
    """Fill a table from a text embedding file; rows absent from it stay random.

    ``path=None`` gives the fully random table. PAD is always zero.
    """
    table = random_embeddings(len(vocab), dim, seed)
    if path is None:
        return EmbeddingTable(table)
    with open(path, encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'count dim'")
        file_dim = int(header[1])
        if file_dim != dim:
            raise ValueError(f"{path}: embedding dim {file_dim} does not match configured {dim}")
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            if len(parts) != dim + 1:
                raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            tok = parts[0]
            if tok in vocab and vocab.stoi[tok] != PAD_ID:
                table[vocab.stoi[tok]] = np.array(parts[1:], dtype=np.float64)
    table[PAD_ID] = 0.0
    return EmbeddingTable(table)


def strip_question_marks(tokens: Sequence[str]) -> list[str]:
    return [t for t in tokens if t != QMARK]


def pad_ids(ids: Sequence[int], max_len: int = DEFAULT_MAX_LEN) -> list[int]:
    """Truncate to ``max_len``; an empty utterance becomes a single PAD."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = list(ids[:max_len])
    return ids or [PAD_ID]


def embed_utterance(ids: Sequence[int], table: EmbeddingTable | np.ndarray,
                    max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    """Embedding grid (d, T) whose columns are the rows of ``ids``."""
    vectors = table.vectors if isinstance(table, EmbeddingTable) else table
    return vectors[pad_ids(ids, max_len)].T.copy()
