"""
Knowledge Base Module

Builds the loose-structured entity-attribute knowledge base from corpora and
triggers a per-conversation knowledge vector from a context.

Pipeline:
1. extract_terms: domain terms ranked by their KL contribution against a
   general corpus, after a tf-idf floor (and an optional entropy floor)
2. count_pairs: symmetric co-occurrence counts inside a sliding window
3. filter_min_count: frequency cut-off producing the final KB

Triggering maps the context to a bag of entities, ranks the attributes of
those entities by summed count (ties lexicographic), keeps the top N and sums
their embedding rows.

KB file format: UTF-8 TSV "entity<TAB>attribute<TAB>count", sorted by entity
then attribute. Lines starting with "# " are comments (the writer puts the
run id there).
"""

import logging
import math
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Container, Dict, Iterable, Iterator, List, Optional, Sequence, Set, Tuple

import numpy as np
from tqdm import tqdm

from app.exceptions import FormatError, InputError, ShapeError
from app.ml.embeddings import EmbeddingTable, Vocabulary
from app.ml.mathcore import DTYPE

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class TermStat:
    """
    Corpus statistics of one candidate term.

    Attributes:
        tfidf (float): domain frequency times smoothed idf over domain documents
        entropy (float): entropy of the term's occurrences across domain documents
        domain_freq (float): probability of the term in the domain corpus
        general_freq (float): add-one smoothed probability in the general corpus
        kl_contribution (float): domain_freq * ln(domain_freq / general_freq)
    """

    tfidf: float
    entropy: float
    domain_freq: float
    general_freq: float
    kl_contribution: float


TermStats = Dict[str, TermStat]


def compute_term_stats(domain_docs: Sequence[Sequence[str]], general_docs: Sequence[Sequence[str]]) -> TermStats:
    """Statistics for every term occurring in the domain corpus."""
    domain_counts = Counter()
    doc_freq = Counter()
    per_doc: Dict[str, List[int]] = defaultdict(list)
    for doc in domain_docs:
        local = Counter(doc)
        domain_counts.update(local)
        doc_freq.update(local.keys())
        for term, c in local.items():
            per_doc[term].append(c)
    general_counts = Counter()
    for doc in general_docs:
        general_counts.update(doc)

    n_domain = sum(domain_counts.values())
    n_general = sum(general_counts.values())
    vocab_size = len(set(domain_counts) | set(general_counts))
    n_docs = len(domain_docs)

    stats: TermStats = {}
    for term, count in domain_counts.items():
        domain_freq = count / n_domain
        general_freq = (general_counts.get(term, 0) + 1) / (n_general + vocab_size)
        idf = 1.0 + math.log((1 + n_docs) / (1 + doc_freq[term]))
        entropy = -sum((c / count) * math.log(c / count) for c in per_doc[term])
        stats[term] = TermStat(
            tfidf=domain_freq * idf,
            entropy=entropy,
            domain_freq=domain_freq,
            general_freq=general_freq,
            kl_contribution=domain_freq * math.log(domain_freq / general_freq),
        )
    return stats


def extract_terms(
    domain_corpus: Sequence[Sequence[str]],
    general_corpus: Sequence[Sequence[str]],
    top_k: int,
    min_entropy: float = 0.0,
) -> Tuple[List[str], TermStats]:
    """
    Extract the domain term vocabulary (entities and attributes alike).

    Terms whose tf-idf is at or above the median of all domain terms (and
    whose entropy reaches min_entropy) are ranked by KL contribution,
    descending, ties broken lexicographically.

    Args:
        domain_corpus: Tokenised domain documents
        general_corpus: Tokenised general documents
        top_k: Number of terms to keep (all candidates if fewer)
        min_entropy: Optional entropy floor, 0 disables it

    Returns:
        Tuple[List[str], TermStats]: ranked vocabulary and the stats of every domain term

    Raises:
        InputError: If a corpus is empty or top_k < 1
    """
    if not domain_corpus or not general_corpus:
        raise InputError("both the domain and the general corpus must be non-empty")
    if top_k < 1:
        raise InputError("top_k must be at least 1")

    stats = compute_term_stats(domain_corpus, general_corpus)
    if not stats:
        return [], stats
    floor = float(np.median([s.tfidf for s in stats.values()]))
    candidates = [t for t, s in stats.items() if s.tfidf >= floor and s.entropy >= min_entropy]
    ranked = sorted(candidates, key=lambda t: (-stats[t].kl_contribution, t))
    logger.info("Term extraction: %d domain terms, %d pass the floors, keeping %d",
                len(stats), len(candidates), min(top_k, len(ranked)))
    return ranked[:top_k], stats


class KnowledgeBase:
    """
    Loose-structured knowledge base: entity -> (attribute -> count).

    Entities and attributes are not distinguished structurally; every
    filtered term may appear on either side.
    """

    def __init__(self, pairs: Optional[Dict[str, Dict[str, int]]] = None):
        self._pairs: Dict[str, Counter] = defaultdict(Counter)
        for entity, attrs in (pairs or {}).items():
            for attribute, count in attrs.items():
                self.add(entity, attribute, count)

    def add(self, entity: str, attribute: str, count: int = 1) -> None:
        if count <= 0:
            raise ValueError("pair counts must be positive")
        self._pairs[entity][attribute] += count

    def merge(self, counts: Dict[Tuple[str, str], int]) -> None:
        for (entity, attribute), count in counts.items():
            self.add(entity, attribute, count)

    def count(self, entity: str, attribute: str) -> int:
        attrs = self._pairs.get(entity)
        return attrs.get(attribute, 0) if attrs else 0

    def attributes_of(self, entity: str) -> Dict[str, int]:
        return dict(self._pairs.get(entity, {}))

    @property
    def entities(self) -> Set[str]:
        return set(self._pairs)

    @property
    def attributes(self) -> List[str]:
        found = set()
        for attrs in self._pairs.values():
            found.update(attrs)
        return sorted(found)

    def items(self) -> Iterator[Tuple[str, str, int]]:
        """(entity, attribute, count) sorted by entity then attribute."""
        for entity in sorted(self._pairs):
            attrs = self._pairs[entity]
            for attribute in sorted(attrs):
                yield entity, attribute, attrs[attribute]

    def filter_min_count(self, min_count: int) -> "KnowledgeBase":
        kept = KnowledgeBase()
        for entity, attribute, count in self.items():
            if count >= min_count:
                kept.add(entity, attribute, count)
        return kept

    def as_dict(self) -> Dict[Tuple[str, str], int]:
        return {(e, a): c for e, a, c in self.items()}

    def __len__(self) -> int:
        return sum(len(attrs) for attrs in self._pairs.values())

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeBase) and self.as_dict() == other.as_dict()

    def to_tsv(self, path, run_id: Optional[str] = None) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            if run_id:
                f.write(f"# run_id={run_id}\n")
            for entity, attribute, count in self.items():
                f.write(f"{entity}\t{attribute}\t{count}\n")

    @classmethod
    def from_tsv(cls, path) -> "KnowledgeBase":
        """
        Load a KB file.

        Raises:
            InputError: If the file cannot be read
            FormatError: On a malformed line or a non-integer/non-positive count
        """
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise InputError(f"cannot read knowledge base {path}: {e}")
        kb = cls()
        for line_no, line in enumerate(text.split("\n"), start=1):
            if not line or (line.startswith("# ") and "\t" not in line):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError("expected entity<TAB>attribute<TAB>count", line=line_no)
            entity, attribute, raw = parts
            if not raw.isdigit() or int(raw) <= 0:
                raise FormatError(f"count must be a positive integer, got {raw!r}", line=line_no)
            kb.add(entity, attribute, int(raw))
        return kb


def _count_documents(corpus: Sequence[Sequence[str]], vocab: Set[str], window: int) -> Counter:
    counts = Counter()
    for doc in corpus:
        n = len(doc)
        for i in range(n):
            left = doc[i]
            if left not in vocab:
                continue
            for j in range(i + 1, min(n, i + window)):
                right = doc[j]
                if right in vocab:
                    counts[(left, right)] += 1
                    counts[(right, left)] += 1
    return counts


def count_pairs(
    corpus: Sequence[Sequence[str]],
    vocab: Iterable[str],
    window: int = DEFAULT_WINDOW,
    workers: int = 1,
    chunk_size: int = 256,
) -> KnowledgeBase:
    """
    Count entity-attribute pairs with a sliding window.

    Every ordered position pair (i, j) with 0 < j - i < window whose tokens
    are both in the vocabulary increments (token_i, token_j) and
    (token_j, token_i).

    Args:
        corpus: Tokenised documents
        vocab: Filtered term vocabulary
        window: Window size, at least 2
        workers: Threads counting document chunks; the merged result does
            not depend on it
        chunk_size: Documents per chunk

    Returns:
        KnowledgeBase: Symmetric pair counts
    """
    if window < 2:
        raise InputError("window must be at least 2")
    vocab = set(vocab)
    chunks = [corpus[i:i + chunk_size] for i in range(0, len(corpus), chunk_size)]
    kb = KnowledgeBase()
    progress = tqdm(total=len(chunks), desc="Counting pairs", unit="chunk", disable=None, leave=False)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for counts in pool.map(lambda c: _count_documents(c, vocab, window), chunks):
                kb.merge(counts)
                progress.update(1)
    else:
        for chunk in chunks:
            kb.merge(_count_documents(chunk, vocab, window))
            progress.update(1)
    progress.close()
    return kb


@dataclass
class KnowledgeVector:
    """
    Triggered knowledge for one conversation.

    Attributes:
        vector (np.ndarray): sum of the embedding rows of contributing_attributes
        contributing_attributes (List[str]): ranked attributes that were summed
        attribute_ids (np.ndarray): their rows in the attribute table
    """

    vector: np.ndarray
    contributing_attributes: List[str] = field(default_factory=list)
    attribute_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def embed_attributes(attr_matrix: np.ndarray, ids: Sequence[int]) -> np.ndarray:
    """kb = sum of the attribute rows, accumulated in rank order."""
    vector = np.zeros(attr_matrix.shape[1], dtype=DTYPE)
    for row in ids:
        vector += attr_matrix[row]
    return vector


def rank_attributes(kb: KnowledgeBase, context_tokens: Iterable[str], top_n: int,
                    known: Optional[Container[str]] = None) -> List[str]:
    """
    Top-N attributes of the entities mentioned in the context (bag-of-entities).

    With `known`, attributes outside it (no embedding row) are skipped before
    the top N are taken.
    """
    if top_n < 1:
        raise InputError("top_n must be at least 1")
    mentioned = sorted(set(context_tokens) & kb.entities)
    summed = Counter()
    for entity in mentioned:
        summed.update(kb.attributes_of(entity))
    ranked = sorted(summed, key=lambda a: (-summed[a], a))
    if known is not None:
        ranked = [a for a in ranked if a in known]
    return ranked[:top_n]


def trigger(
    kb: KnowledgeBase,
    context_tokens: Sequence[str],
    attr_table: EmbeddingTable,
    attr_vocab: Vocabulary,
    top_n: int,
) -> KnowledgeVector:
    """
    Knowledge vector of a context.

    Args:
        kb: Knowledge base
        context_tokens: Context and query tokens (never the candidate response)
        attr_table: Attribute embedding table of the knowledge dimension
        attr_vocab: Vocabulary of attr_table
        top_n: Number of attributes to keep (fewer when unavailable); attributes
            missing from attr_vocab are skipped

    Returns:
        KnowledgeVector: zero vector with no attributes when no entity matches
    """
    if attr_table.rows != len(attr_vocab):
        raise ShapeError(f"attribute table has {attr_table.rows} rows but vocabulary has {len(attr_vocab)}")
    attributes = rank_attributes(kb, context_tokens, top_n, known=attr_vocab)
    ids = attr_vocab.indices(attributes)
    vector = embed_attributes(attr_table.matrix, ids)
    return KnowledgeVector(vector=vector, contributing_attributes=attributes, attribute_ids=ids)
