"""
Conversation Data Module

Corpus ingestion, turn filtering and positive/negative sample construction.

Corpus format: one JSON object per line, {"utterances": ["...", ...]}.
Sample format: one JSON object per line,
{"context": [...], "query": "...", "response": "...", "label": 0|1, "group": id}.

Features:
- load_corpus / filter_turns / turn_histogram / context_stats
- build_samples: 1 negative per positive for train, 9 for valid/test,
  negatives drawn uniformly from other conversations' responses
- split_corpus: seeded train/valid/test split
- write_samples / read_samples
- make_synthetic_task: a knowledge-dependent toy task
"""

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Hashable, List, Optional, Sequence

from pydantic import ValidationError

from app.exceptions import ConfigurationError, FormatError, InputError
from app.ml.embeddings import detokenize, tokenize
from app.ml.mathcore import Rng
from app.schemas import CorpusRecord, SampleRecord

logger = logging.getLogger(__name__)

MIN_CORPUS_SIZE = 10
NEGATIVES_PER_SPLIT = {"train": 1, "valid": 9, "test": 9}


@dataclass
class Conversation:
    """
    One conversation.

    Attributes:
        utterances (List[List[str]]): tokenised utterances in order
    """

    utterances: List[List[str]]

    @property
    def turn_count(self) -> int:
        return len(self.utterances)


@dataclass
class ConversationSample:
    """A (context, query, candidate response) pairing with its label and group."""

    context: List[List[str]]
    query: List[str]
    response: List[str]
    label: int
    group_id: str

    @property
    def context_tokens(self) -> List[str]:
        """Context and query tokens, the text knowledge is triggered from."""
        return [t for u in self.context for t in u] + list(self.query)


def _read_lines(path) -> List[str]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"cannot read {path}: no such file")
    try:
        return path.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def load_corpus(path, tokenization: str = "word", strict: bool = True) -> List[Conversation]:
    """
    Read a conversation corpus.

    Args:
        path: Line-delimited corpus file
        tokenization: "word" or "char"
        strict: Raise on the first malformed line; otherwise skip it with a warning

    Returns:
        List[Conversation]: conversations in file order

    Raises:
        InputError: If the file cannot be read
        FormatError: If a line is malformed or has fewer than 2 non-empty utterances
            in strict mode (carries the line number)
    """
    conversations = []
    skipped = 0
    dropped = 0
    for number, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            record = CorpusRecord.model_validate_json(line)
        except ValidationError as exc:
            if strict:
                raise FormatError(f"malformed conversation record: {exc.errors()[0]['msg']}", line=number) from exc
            logger.warning("Skipping malformed record on line %d", number)
            skipped += 1
            continue
        if not record.utterances:
            logger.warning("Skipping empty conversation on line %d", number)
            skipped += 1
            continue
        utterances = []
        for text in record.utterances:
            tokens = tokenize(text, tokenization)
            if not tokens:
                logger.warning("Dropping empty utterance on line %d", number)
                dropped += 1
                continue
            utterances.append(tokens)
        if len(utterances) < 2:
            if strict:
                raise FormatError(f"conversation has {len(utterances)} non-empty utterance(s), needs at least 2",
                                  line=number)
            logger.warning("Skipping conversation with fewer than 2 utterances on line %d", number)
            skipped += 1
            continue
        conversations.append(Conversation(utterances))
    logger.info("Loaded %d conversations from %s (%d skipped, %d empty utterances dropped)",
                len(conversations), path, skipped, dropped)
    return conversations


def turn_histogram(convs: Sequence[Conversation]) -> Dict[int, int]:
    return dict(sorted(Counter(c.turn_count for c in convs).items()))


def filter_turns(convs: Sequence[Conversation], min_turns: int = 3, max_turns: int = 7) -> List[Conversation]:
    """Keep conversations with min_turns <= turn_count <= max_turns; logs the turn histogram."""
    if min_turns > max_turns:
        raise InputError(f"min_turns {min_turns} exceeds max_turns {max_turns}")
    logger.info("Turn histogram: %s", turn_histogram(convs))
    kept = [c for c in convs if min_turns <= c.turn_count <= max_turns]
    logger.info("Kept %d of %d conversations with %d-%d turns", len(kept), len(convs), min_turns, max_turns)
    return kept


def context_stats(convs: Sequence[Conversation]) -> Dict[str, float]:
    """Average turns, average context length in tokens (all but the response) and corpus size."""
    if not convs:
        return {"conversations": 0, "avg_turns": 0.0, "avg_context_tokens": 0.0}
    context_lengths = [sum(len(u) for u in c.utterances[:-1]) for c in convs]
    return {
        "conversations": len(convs),
        "avg_turns": sum(c.turn_count for c in convs) / len(convs),
        "avg_context_tokens": sum(context_lengths) / len(convs),
    }


def _samples_for(n: int, convs: Sequence[Conversation], split: str, rng: Rng, negatives: int,
                 answer_key: Optional[Callable[[Sequence[str]], Hashable]]) -> List[ConversationSample]:
    conv = convs[n]
    context, query, response = conv.utterances[:-2], conv.utterances[-2], conv.utterances[-1]
    group_id = f"{split}-{n}"
    samples = [ConversationSample(context, query, response, 1, group_id)]
    seen = {tuple(response)}
    answer = answer_key(response) if answer_key is not None else None
    sub = rng.derive(n)
    for k in sub.permutation(len(convs)):
        if len(samples) > negatives:
            break
        if k == n:
            continue
        candidate = convs[k].utterances[-1]
        if tuple(candidate) in seen or (answer_key is not None and answer_key(candidate) == answer):
            continue
        seen.add(tuple(candidate))
        samples.append(ConversationSample(context, query, candidate, 0, group_id))
    if len(samples) <= negatives:
        raise ConfigurationError(
            f"conversation {n}: only {len(samples) - 1} distinct negative responses available, need {negatives}")
    position = int(sub.integers(0, len(samples)))
    samples.insert(position, samples.pop(0))
    return samples


def build_samples(convs: Sequence[Conversation], split: str, rng: Rng, threads: int = 1,
                  answer_key: Optional[Callable[[Sequence[str]], Hashable]] = None) -> List[ConversationSample]:
    """
    Build labelled samples from conversations.

    The positive keeps the real last utterance as response; negatives replace
    it with distinct responses of other conversations, never equal to the
    positive. Each conversation draws from its own derived generator, so the
    result does not depend on `threads`.

    Args:
        convs: Conversations with at least 2 utterances
        split: "train" (1 negative each) or "valid"/"test" (9 negatives each)
        rng: Root generator
        threads: Worker threads
        answer_key: Optional key of a response; candidates sharing the
            positive's key are never used as negatives

    Returns:
        List[ConversationSample]: groups in conversation order, the positive at a seeded position

    Raises:
        ConfigurationError: If the corpus is too small to draw distinct negatives
    """
    if split not in NEGATIVES_PER_SPLIT:
        raise InputError(f"unknown split {split!r}; choose from train, valid, test")
    if len(convs) < MIN_CORPUS_SIZE:
        raise ConfigurationError(f"need at least {MIN_CORPUS_SIZE} conversations to draw negatives, got {len(convs)}")
    short = [n for n, c in enumerate(convs) if c.turn_count < 2]
    if short:
        raise InputError(f"conversation {short[0]} has fewer than 2 utterances")
    negatives = NEGATIVES_PER_SPLIT[split]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        groups = list(pool.map(lambda n: _samples_for(n, convs, split, rng, negatives, answer_key), range(len(convs))))
    samples = [s for group in groups for s in group]
    logger.info("Built %d %s samples in %d groups", len(samples), split, len(groups))
    return samples


def split_corpus(
    convs: Sequence[Conversation],
    rng: Rng,
    valid_fraction: float = 0.1,
    test_fraction: float = 0.1,
) -> Dict[str, List[Conversation]]:
    """Seeded permutation split into train / valid / test."""
    if valid_fraction < 0 or test_fraction < 0 or valid_fraction + test_fraction >= 1:
        raise InputError("valid and test fractions must be non-negative and sum below 1")
    order = rng.permutation(len(convs))
    n_valid = int(round(len(convs) * valid_fraction))
    n_test = int(round(len(convs) * test_fraction))
    valid = [convs[k] for k in order[:n_valid]]
    test = [convs[k] for k in order[n_valid:n_valid + n_test]]
    train = [convs[k] for k in order[n_valid + n_test:]]
    return {"train": train, "valid": valid, "test": test}


def write_samples(samples: Sequence[ConversationSample], path, tokenization: str = "word") -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for s in samples:
            record = SampleRecord(
                context=[detokenize(u, tokenization) for u in s.context],
                query=detokenize(s.query, tokenization),
                response=detokenize(s.response, tokenization),
                label=s.label,
                group=s.group_id,
            )
            handle.write(json.dumps(record.model_dump(), ensure_ascii=False) + "\n")


def read_samples(path, tokenization: str = "word") -> List[ConversationSample]:
    """Read a sample file written by write_samples (FormatError with the line number on bad records)."""
    samples = []
    for number, line in enumerate(_read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            record = SampleRecord.model_validate_json(line)
        except ValidationError as exc:
            raise FormatError(f"malformed sample record: {exc.errors()[0]['msg']}", line=number) from exc
        samples.append(ConversationSample(
            context=[tokenize(u, tokenization) for u in record.context],
            query=tokenize(record.query, tokenization),
            response=tokenize(record.response, tokenization),
            label=record.label,
            group_id=record.group,
        ))
    return samples


@dataclass
class SyntheticTask:
    """
    A corpus where the right response depends only on background knowledge.

    Every entity has one attribute. Contexts mention an entity; the true
    response is at most one filler word followed by its attribute. Any
    response ending in that attribute fits, so sample building passes
    `response_attribute` as answer key. Test conversations use entities that never
    occur in train or valid conversations, so only the knowledge base (built
    from the domain corpus, which covers every entity) links them to their
    attribute.
    """

    domain_corpus: List[List[str]]
    general_corpus: List[List[str]]
    splits: Dict[str, List[Conversation]]
    attribute_of: Dict[str, str] = field(default_factory=dict)


def response_attribute(response: Sequence[str]) -> str:
    """Answer key of a synthetic response: its final token."""
    return response[-1]


def _filler(rng: Rng, words: Sequence[str], low: int, high: int) -> List[str]:
    return [words[int(k)] for k in rng.integers(0, len(words), int(rng.integers(low, high + 1)))]


def make_synthetic_task(
    rng: Rng,
    conversations: int = 2000,
    entities: int = 400,
    attributes: int = 20,
    filler_words: int = 60,
    test_fraction: float = 0.2,
    valid_fraction: float = 0.1,
) -> SyntheticTask:
    """
    Generate a knowledge-dependent conversation task.

    Args:
        rng: Generator for every draw
        conversations: Total conversations across the three splits
        entities: Entity count; the last test_fraction of them are test-only
        attributes: Attribute count
        filler_words: General vocabulary size
        test_fraction: Share of conversations (and entities) reserved for test
        valid_fraction: Share of conversations used for validation

    Returns:
        SyntheticTask: corpora, conversation splits and the true entity->attribute map
    """
    if entities < 2 or attributes < 2 or conversations < 3 * MIN_CORPUS_SIZE:
        raise InputError("synthetic task needs at least 2 entities, 2 attributes and 30 conversations")
    entity_names = [f"ent{n}" for n in range(entities)]
    attribute_names = [f"attr{n}" for n in range(attributes)]
    filler = [f"w{n}" for n in range(filler_words)]
    attribute_of = {e: attribute_names[int(rng.integers(0, attributes))] for e in entity_names}

    domain = []
    for e in entity_names:
        for _ in range(3):
            domain.append([e, attribute_of[e]])
    general = [_filler(rng, filler, 5, 12) for _ in range(max(200, conversations // 4))]

    n_test_entities = max(1, int(round(entities * test_fraction)))
    train_entities = entity_names[:-n_test_entities]
    test_entities = entity_names[-n_test_entities:]

    def conversation(entity: str) -> Conversation:
        turns = int(rng.integers(3, 8))
        context = [_filler(rng, filler, 2, 5) for _ in range(turns - 2)]
        mention = context[int(rng.integers(0, len(context)))]
        mention.insert(int(rng.integers(0, len(mention) + 1)), entity)
        query = _filler(rng, filler, 2, 5)
        response = _filler(rng, filler, 0, 1) + [attribute_of[entity]]
        return Conversation(context + [query, response])

    n_test = int(round(conversations * test_fraction))
    n_valid = int(round(conversations * valid_fraction))
    n_train = conversations - n_test - n_valid

    def pick(pool: Sequence[str]) -> str:
        return pool[int(rng.integers(0, len(pool)))]

    splits = {
        "train": [conversation(pick(train_entities)) for _ in range(n_train)],
        "valid": [conversation(pick(train_entities)) for _ in range(n_valid)],
        "test": [conversation(pick(test_entities)) for _ in range(n_test)],
    }
    logger.info("Synthetic task: %d/%d/%d conversations, %d entities (%d test-only), %d attributes",
                n_train, n_valid, n_test, entities, n_test_entities, attributes)
    return SyntheticTask(domain_corpus=domain, general_corpus=general, splits=splits, attribute_of=attribute_of)


def write_corpus(convs: Sequence[Conversation], path, tokenization: str = "word") -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for conv in convs:
            record = CorpusRecord(utterances=[detokenize(u, tokenization) for u in conv.utterances])
            handle.write(json.dumps(record.model_dump(), ensure_ascii=False) + "\n")


def write_documents(docs: Sequence[Sequence[str]], path) -> None:
    """Plain text corpus: one whitespace-joined document per line."""
    with open(path, "w", encoding="utf-8") as handle:
        for doc in docs:
            handle.write(" ".join(doc) + "\n")


def read_documents(path, tokenization: str = "word") -> List[List[str]]:
    """Plain text corpus reader; blank lines are skipped."""
    return [tokenize(line, tokenization) for line in _read_lines(path) if line.strip()]
