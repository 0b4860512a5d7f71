"""
Embeddings Module

Vocabulary management and trainable embedding tables for words, characters
and knowledge attributes.

Features:
- Vocabulary with UNK/PAD at fixed indices 0 and 1
- Word-level and character-level tokenizers
- Total lookup (unknown tokens fall back to the UNK row)
- Text interchange format "token v1 v2 ... vD" (load and save)

Usage:
```python
vocab = build_vocabulary([["ubuntu", "kernel"], ["kernel", "panic"]])
table = load_text_embeddings("vectors.txt", vocab, embed_dim=300, rng=Rng(7))
vectors = lookup(table, ["kernel", "zzzqq"], vocab)   # second row is the UNK row
```
"""

import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from app.exceptions import FormatError, InputError, ShapeError
from app.ml.mathcore import DTYPE, Rng

logger = logging.getLogger(__name__)

UNK = "<unk>"
PAD = "<pad>"
UNK_INDEX = 0
PAD_INDEX = 1
INIT_RANGE = 0.1


def tokenize(text: str, level: str = "word") -> List[str]:
    """
    Split an utterance into tokens.

    Args:
        text: Raw utterance
        level: "word" splits on whitespace, "char" yields every
            non-whitespace character (Chinese-style corpora)

    Returns:
        List[str]: Tokens in order
    """
    if level == "word":
        return text.split()
    if level == "char":
        return [ch for ch in text if not ch.isspace()]
    raise ValueError(f"unknown tokenization level: {level}")


def detokenize(tokens: Sequence[str], level: str = "word") -> str:
    return " ".join(tokens) if level == "word" else "".join(tokens)


class Vocabulary:
    """
    Bijective token <-> index map with UNK and PAD always present.

    Attributes:
        itos (List[str]): index -> token
        stoi (Dict[str, int]): token -> index
    """

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: List[str] = [UNK, PAD]
        self.stoi: Dict[str, int] = {UNK: UNK_INDEX, PAD: PAD_INDEX}
        for token in tokens:
            self.add(token)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def index(self, token: str) -> int:
        return self.stoi.get(token, UNK_INDEX)

    def indices(self, tokens: Sequence[str]) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __len__(self) -> int:
        return len(self.itos)

    def to_list(self) -> List[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if list(itos[:2]) != [UNK, PAD]:
            raise FormatError("vocabulary must start with the UNK and PAD tokens")
        vocab = cls(itos[2:])
        if len(vocab) != len(itos):
            raise FormatError("vocabulary contains duplicate tokens")
        return vocab


def build_vocabulary(streams: Iterable[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    """Vocabulary over token streams, ordered by frequency desc then lexicographically."""
    counts = Counter()
    for stream in streams:
        counts.update(stream)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq and t not in (UNK, PAD)),
                    key=lambda t: (-counts[t], t))
    return Vocabulary(ranked)


@dataclass
class EmbeddingTable:
    """
    Embedding matrix with one row per vocabulary entry.

    Attributes:
        matrix (np.ndarray): vocab_size x embed_dim, float64
        trainable (bool): whether training updates the rows
    """

    matrix: np.ndarray
    trainable: bool = True

    @property
    def embed_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]


def random_table(vocab_size: int, embed_dim: int, rng: Rng, trainable: bool = True,
                 scale: float = INIT_RANGE) -> EmbeddingTable:
    """Uniform[-scale, scale] initialised table."""
    matrix = rng.uniform(-scale, scale, (vocab_size, embed_dim)).astype(DTYPE)
    return EmbeddingTable(matrix=matrix, trainable=trainable)


def lookup(table: EmbeddingTable, tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    """
    Embedding rows for a token sequence.

    Args:
        table: Embedding table whose rows match the vocabulary
        tokens: Token strings; out-of-vocabulary tokens map to the UNK row
        vocab: Vocabulary the table was built for

    Returns:
        np.ndarray: len(tokens) x embed_dim (0 x embed_dim for an empty sequence)

    Raises:
        ShapeError: If the table and vocabulary sizes differ
    """
    if table.rows != len(vocab):
        raise ShapeError(f"embedding table has {table.rows} rows but vocabulary has {len(vocab)} entries")
    if not tokens:
        return np.zeros((0, table.embed_dim), dtype=DTYPE)
    return table.matrix[vocab.indices(tokens)]


def load_text_embeddings(
    path,
    vocab: Vocabulary,
    embed_dim: Optional[int] = None,
    rng: Optional[Rng] = None,
) -> EmbeddingTable:
    """
    Load a table from the text interchange format.

    Rows for tokens present in both the file and the vocabulary are copied;
    every other row is initialised uniformly in [-0.1, 0.1] from `rng`.

    Args:
        path: UTF-8 file, one "token v1 v2 ... vD" entry per line
        vocab: Target vocabulary
        embed_dim: Dimension to use when the file is empty; must agree with
            the file otherwise
        rng: Generator for missing rows (seed 0 when omitted)

    Returns:
        EmbeddingTable: len(vocab) x D table

    Raises:
        InputError: If the file cannot be read
        FormatError: If line dimensions disagree (names the line number)
    """
    rng = rng or Rng(0)
    try:
        lines = Path(path).read_text(encoding="utf-8").split("\n")
    except OSError as e:
        raise InputError(f"cannot read embeddings file {path}: {e}")

    found: Dict[str, np.ndarray] = {}
    dim = None
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split(" ")
        token, values = parts[0], parts[1:]
        if not values:
            raise FormatError(f"token {token!r} has no vector", line=line_no)
        if dim is None:
            dim = len(values)
        elif len(values) != dim:
            raise FormatError(f"expected {dim} values, found {len(values)}", line=line_no)
        try:
            vector = np.array([float(v) for v in values], dtype=DTYPE)
        except ValueError:
            raise FormatError("non-numeric embedding value", line=line_no)
        if token in vocab:
            found[token] = vector

    if dim is None:
        if embed_dim is None:
            raise FormatError("empty embeddings file and no embed_dim given")
        dim = embed_dim
    elif embed_dim is not None and embed_dim != dim:
        raise FormatError(f"file vectors have dimension {dim}, configuration expects {embed_dim}")

    table = random_table(len(vocab), dim, rng)
    for token, vector in found.items():
        table.matrix[vocab.index(token)] = vector
    logger.info("Loaded %d of %d vocabulary rows from %s (dim %d)", len(found), len(vocab), path, dim)
    return table


def save_text_embeddings(table: EmbeddingTable, vocab: Vocabulary, path) -> None:
    """Write every row with 17 significant digits so loading reproduces it exactly."""
    if table.rows != len(vocab):
        raise ShapeError(f"embedding table has {table.rows} rows but vocabulary has {len(vocab)} entries")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for token, row in zip(vocab.itos, table.matrix):
            f.write(token + " " + " ".join(format(float(v), ".17g") for v in row) + "\n")
