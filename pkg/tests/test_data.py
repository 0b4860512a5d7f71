import json
from collections import Counter

import pytest

from app.exceptions import ConfigurationError, FormatError, InputError
from app.ml.data import (
    Conversation,
    build_samples,
    context_stats,
    filter_turns,
    load_corpus,
    make_synthetic_task,
    read_samples,
    response_attribute,
    split_corpus,
    turn_histogram,
    write_samples,
)
from app.ml.mathcore import Rng
from tests.conftest import make_conversations


def write_lines(path, records):
    path.write_text("\n".join(r if isinstance(r, str) else json.dumps(r) for r in records) + "\n", encoding="utf-8")


class TestLoadCorpus:
    def test_valid_lines(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [{"utterances": ["hi there", "hello", "bye"]}] * 3)
        convs = load_corpus(path)
        assert len(convs) == 3
        assert convs[0].utterances[0] == ["hi", "there"]

    def test_empty_conversation_is_skipped(self, tmp_path, caplog):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [{"utterances": []}, {"utterances": ["a", "b"]}])
        assert len(load_corpus(path)) == 1
        assert "empty conversation" in caplog.text

    def test_empty_utterance_is_dropped(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [{"utterances": ["a", "   ", "b"]}])
        assert load_corpus(path)[0].utterances == [["a"], ["b"]]

    def test_strict_mode_names_line(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [{"utterances": ["a", "b"]}, "{not json", {"utterances": ["c", "d"]}])
        with pytest.raises(FormatError, match="line 2"):
            load_corpus(path)

    def test_lenient_mode_skips(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [{"utterances": ["a", "b"]}, {"turns": []}, {"utterances": ["c", "d"]}])
        assert len(load_corpus(path, strict=False)) == 2

    def test_single_utterance_rejected_in_strict_mode(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [{"utterances": ["a", "b"]}, {"utterances": ["only one"]}])
        with pytest.raises(FormatError, match="line 2"):
            load_corpus(path)

    def test_single_utterance_skipped_in_lenient_mode(self, tmp_path, caplog):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [{"utterances": ["a", "b"]}, {"utterances": ["x", "   "]}, {"utterances": ["c", "d"]}])
        convs = load_corpus(path, strict=False)
        assert [c.utterances for c in convs] == [[["a"], ["b"]], [["c"], ["d"]]]
        assert "fewer than 2 utterances on line 2" in caplog.text

    def test_character_tokenization(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        path.write_text(json.dumps({"utterances": ["你好", "再见"]}, ensure_ascii=False) + "\n", encoding="utf-8")
        assert load_corpus(path, tokenization="char")[0].utterances == [["你", "好"], ["再", "见"]]

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_corpus(tmp_path / "missing.jsonl")


class TestFilterTurns:
    def convs(self, counts):
        return [Conversation([["x"]] * n) for n in counts]

    def test_keeps_range(self):
        kept = filter_turns(self.convs([2, 3, 7, 8]))
        assert [c.turn_count for c in kept] == [3, 7]

    def test_all_out_of_range(self):
        assert filter_turns(self.convs([1, 2, 9])) == []

    def test_histogram(self):
        assert turn_histogram(self.convs([3, 3, 4])) == {3: 2, 4: 1}

    def test_idempotent(self):
        once = filter_turns(self.convs([2, 3, 5, 8]))
        assert filter_turns(once) == once

    def test_bad_bounds(self):
        with pytest.raises(InputError):
            filter_turns([], min_turns=5, max_turns=3)

    def test_context_stats(self):
        stats = context_stats([Conversation([["a", "b"], ["c"], ["d"]])])
        assert stats == {"conversations": 1, "avg_turns": 3.0, "avg_context_tokens": 3.0}


class TestBuildSamples:
    def test_train_split(self, conversations):
        samples = build_samples(conversations, "train", Rng(1))
        assert len(samples) == 200
        assert sum(s.label for s in samples) == 100

    def test_test_split_groups(self, conversations):
        samples = build_samples(conversations, "test", Rng(1))
        assert len(samples) == 1000
        groups = Counter(s.group_id for s in samples)
        assert len(groups) == 100
        assert set(groups.values()) == {10}
        positives = Counter(s.group_id for s in samples if s.label == 1)
        assert set(positives.values()) == {1}

    def test_split_of_a_positive(self, conversations):
        samples = build_samples(conversations, "train", Rng(1))
        conv = conversations[0]
        positive = next(s for s in samples if s.group_id == "train-0" and s.label == 1)
        assert positive.context == conv.utterances[:-2]
        assert positive.query == conv.utterances[-2]
        assert positive.response == conv.utterances[-1]

    def test_negatives_differ_from_positive(self, conversations):
        samples = build_samples(conversations, "valid", Rng(2))
        by_group = {}
        for s in samples:
            by_group.setdefault(s.group_id, []).append(s)
        for members in by_group.values():
            positive = next(s for s in members if s.label == 1)
            responses = [tuple(s.response) for s in members]
            assert len(set(responses)) == len(responses)
            assert all(s.response != positive.response for s in members if s.label == 0)

    def test_answer_key_excludes_same_answer_negatives(self, conversations):
        samples = build_samples(conversations, "test", Rng(2), answer_key=lambda r: r[-1])
        by_group = {}
        for s in samples:
            by_group.setdefault(s.group_id, []).append(s)
        assert len(by_group) == 100
        for members in by_group.values():
            positive = next(s for s in members if s.label == 1)
            assert all(s.response[-1] != positive.response[-1] for s in members if s.label == 0)

    def test_deterministic(self, conversations):
        assert build_samples(conversations, "test", Rng(3)) == build_samples(conversations, "test", Rng(3))

    def test_threads_do_not_change_result(self, conversations):
        assert build_samples(conversations, "test", Rng(3), threads=1) == \
            build_samples(conversations, "test", Rng(3), threads=4)

    def test_positive_position_varies(self, conversations):
        samples = build_samples(conversations, "test", Rng(4))
        positions = {n % 10 for n, s in enumerate(samples) if s.label == 1}
        assert len(positions) > 1

    def test_corpus_too_small(self):
        with pytest.raises(ConfigurationError):
            build_samples(make_conversations(9), "train", Rng(0))

    def test_too_few_distinct_responses(self):
        convs = [Conversation([["q"], ["same", "reply"]]) for _ in range(12)]
        with pytest.raises(ConfigurationError):
            build_samples(convs, "train", Rng(0))

    def test_unknown_split(self, conversations):
        with pytest.raises(InputError):
            build_samples(conversations, "dev", Rng(0))


class TestSampleFiles:
    def test_write_then_read(self, tmp_path, conversations):
        samples = build_samples(conversations[:20], "test", Rng(5))
        path = tmp_path / "test.jsonl"
        write_samples(samples, path)
        assert read_samples(path) == samples

    def test_bad_label_names_line(self, tmp_path):
        path = tmp_path / "samples.jsonl"
        write_lines(path, [
            {"context": [], "query": "q", "response": "r", "label": 1, "group": "g"},
            {"context": [], "query": "q", "response": "r", "label": 2, "group": "g"},
        ])
        with pytest.raises(FormatError, match="line 2"):
            read_samples(path)


class TestSplitAndSynthetic:
    def test_split_sizes(self, conversations):
        parts = split_corpus(conversations, Rng(0), valid_fraction=0.1, test_fraction=0.2)
        assert [len(parts[k]) for k in ("train", "valid", "test")] == [70, 10, 20]

    def test_synthetic_test_entities_are_unseen(self):
        task = make_synthetic_task(Rng(0), conversations=200, entities=50, attributes=5)
        def entities(convs):
            return {t for c in convs for u in c.utterances for t in u if t.startswith("ent")}
        seen = entities(task.splits["train"]) | entities(task.splits["valid"])
        assert not seen & entities(task.splits["test"])
        for conv in task.splits["test"]:
            entity = next(t for u in conv.utterances[:-2] for t in u if t.startswith("ent"))
            assert conv.utterances[-1][-1] == task.attribute_of[entity]

    def test_synthetic_negatives_carry_another_attribute(self):
        task = make_synthetic_task(Rng(3), conversations=200, entities=50, attributes=5)
        for split in ("train", "test"):
            samples = build_samples(task.splits["train"], split, Rng(4), answer_key=response_attribute)
            answers = {s.group_id: response_attribute(s.response) for s in samples if s.label == 1}
            for s in samples:
                if s.label == 0:
                    assert response_attribute(s.response) != answers[s.group_id]

    def test_synthetic_responses_end_with_the_attribute(self):
        task = make_synthetic_task(Rng(5), conversations=60, entities=10, attributes=3)
        attributes = set(task.attribute_of.values())
        for conv in task.splits["train"]:
            assert 1 <= len(conv.utterances[-1]) <= 2
            assert response_attribute(conv.utterances[-1]) in attributes

    def test_synthetic_is_deterministic(self):
        a = make_synthetic_task(Rng(9), conversations=60, entities=10, attributes=3)
        b = make_synthetic_task(Rng(9), conversations=60, entities=10, attributes=3)
        assert a.splits == b.splits
        assert a.domain_corpus == b.domain_corpus
