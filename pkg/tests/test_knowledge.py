from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.exceptions import FormatError, InputError
from app.ml.embeddings import Vocabulary, random_table
from app.ml.knowledge import (
    KnowledgeBase, compute_term_stats, count_pairs, extract_terms, rank_attributes, trigger,
)


def brute_force_pairs(corpus, vocab, window):
    counts = Counter()
    for doc in corpus:
        for i, left in enumerate(doc):
            for j, right in enumerate(doc):
                if 0 < j - i < window and left in vocab and right in vocab:
                    counts[(left, right)] += 1
                    counts[(right, left)] += 1
    return dict(counts)


class TestTermExtraction:
    domain = [["ubuntu", "kernel", "the"], ["ubuntu", "grub", "the"]]
    general = [["the", "a", "the"], ["a", "the"]]

    def test_tfidf_floor_then_kl_ranking(self):
        ranked, stats = extract_terms(self.domain, self.general, top_k=10)
        assert ranked == ["ubuntu", "the"]
        assert stats["ubuntu"].kl_contribution > 0 > stats["the"].kl_contribution

    def test_top_k_truncates(self):
        ranked, _ = extract_terms(self.domain, self.general, top_k=1)
        assert ranked == ["ubuntu"]

    def test_smoothed_general_frequency(self):
        stats = compute_term_stats(self.domain, self.general)
        assert stats["ubuntu"].general_freq == pytest.approx(1 / 10)
        assert stats["the"].general_freq == pytest.approx(4 / 10)

    def test_entropy_floor(self):
        ranked, stats = extract_terms(self.domain, self.general, top_k=10, min_entropy=0.5)
        assert stats["ubuntu"].entropy == pytest.approx(np.log(2))
        assert ranked == ["ubuntu", "the"]
        single = [["ubuntu", "ubuntu", "kernel"], ["grub"]]
        ranked, _ = extract_terms(single, self.general, top_k=10, min_entropy=0.5)
        assert ranked == []

    def test_empty_corpus(self):
        with pytest.raises(InputError):
            extract_terms([], self.general, top_k=3)

    def test_identical_corpora_rank_lexicographically(self):
        corpus = [["c", "a", "b"], ["b", "c", "a"]]
        ranked, stats = extract_terms(corpus, corpus, top_k=10)
        assert ranked == ["a", "b", "c"]
        for stat in stats.values():
            assert stat.kl_contribution == pytest.approx(0.0, abs=1e-12)

    def test_deterministic(self):
        first, _ = extract_terms(self.domain, self.general, top_k=2)
        second, _ = extract_terms(self.domain, self.general, top_k=2)
        assert first == second


class TestCountPairs:
    def test_window_two_counts_neighbours_only(self):
        kb = count_pairs([["a", "b", "c"]], {"a", "b", "c"}, window=2)
        assert kb.as_dict() == {("a", "b"): 1, ("b", "a"): 1, ("b", "c"): 1, ("c", "b"): 1}

    def test_window_three_reaches_further(self):
        kb = count_pairs([["a", "b", "c"]], {"a", "b", "c"}, window=3)
        assert kb.count("a", "c") == 1
        assert kb.count("c", "a") == 1

    def test_symmetry(self, rng):
        words = [f"t{n}" for n in range(8)]
        corpus = [[words[i] for i in rng.integers(0, 8, 12)] for _ in range(20)]
        kb = count_pairs(corpus, words[:5])
        for entity, attribute, count in kb.items():
            assert kb.count(attribute, entity) == count

    def test_matches_brute_force(self, rng):
        words = [f"t{n}" for n in range(10)]
        vocab = set(words[:6])
        corpus = [[words[i] for i in rng.integers(0, 10, int(rng.integers(1, 15)))] for _ in range(40)]
        kb = count_pairs(corpus, vocab, window=4)
        assert kb.as_dict() == brute_force_pairs(corpus, vocab, window=4)

    def test_matches_brute_force_across_random_corpora(self, rng):
        words = [f"t{n}" for n in range(12)]
        for n in range(200):
            draw = rng.derive(n)
            vocab = set(words[:int(draw.integers(1, 12))])
            window = int(draw.integers(2, 9))
            corpus = [[words[i] for i in draw.integers(0, 12, int(draw.integers(0, 40)))]
                      for _ in range(int(draw.integers(1, 25)))]
            kb = count_pairs(corpus, vocab, window=window)
            assert kb.as_dict() == brute_force_pairs(corpus, vocab, window), (n, window)

    def test_worker_count_does_not_change_result(self, rng):
        words = [f"t{n}" for n in range(10)]
        corpus = [[words[i] for i in rng.integers(0, 10, 10)] for _ in range(50)]
        single = count_pairs(corpus, words, workers=1, chunk_size=3)
        threaded = count_pairs(corpus, words, workers=4, chunk_size=3)
        assert single == threaded

    def test_window_below_two(self):
        with pytest.raises(InputError):
            count_pairs([["a"]], {"a"}, window=1)


class TestKnowledgeBase:
    def test_min_count_filter(self):
        kb = KnowledgeBase({"x": {"y": 1, "z": 3}})
        assert kb.filter_min_count(2).as_dict() == {("x", "z"): 3}

    def test_tsv_roundtrip_with_run_id(self, tmp_path):
        kb = KnowledgeBase({"ubuntu": {"kernel": 4, "grub": 2}, "grub": {"ubuntu": 2}})
        path = tmp_path / "kb.tsv"
        kb.to_tsv(path, run_id="abc")
        text = path.read_text(encoding="utf-8")
        assert text.splitlines()[0] == "# run_id=abc"
        assert text.splitlines()[1] == "grub\tubuntu\t2"
        assert KnowledgeBase.from_tsv(path) == kb

    def test_bad_count_names_line(self, tmp_path):
        path = tmp_path / "kb.tsv"
        path.write_text("a\tb\t2\na\tc\t0\n", encoding="utf-8")
        with pytest.raises(FormatError, match="line 2"):
            KnowledgeBase.from_tsv(path)

    @pytest.mark.parametrize("raw", ["1.5", "-3"])
    def test_non_integer_count_names_line(self, tmp_path, raw):
        path = tmp_path / "kb.tsv"
        path.write_text(f"# run_id=x\na\tb\t2\na\tc\t{raw}\n", encoding="utf-8")
        with pytest.raises(FormatError, match="line 3"):
            KnowledgeBase.from_tsv(path)

    def test_wrong_column_count(self, tmp_path):
        path = tmp_path / "kb.tsv"
        path.write_text("a\tb\n", encoding="utf-8")
        with pytest.raises(FormatError, match="line 1"):
            KnowledgeBase.from_tsv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            KnowledgeBase.from_tsv(tmp_path / "nope.tsv")


class TestTrigger:
    kb = KnowledgeBase({"ent1": {"a": 3, "b": 1}, "ent2": {"b": 3, "c": 1}})

    def test_summed_counts_rank(self):
        assert rank_attributes(self.kb, ["ent1", "ent2", "ent1"], top_n=10) == ["b", "a", "c"]
        assert rank_attributes(self.kb, ["ent1", "ent2"], top_n=2) == ["b", "a"]

    def test_ties_are_lexicographic(self):
        kb = KnowledgeBase({"e": {"z": 2, "m": 2, "a": 2}})
        assert rank_attributes(kb, ["e"], top_n=2) == ["a", "m"]

    def test_vector_is_sum_of_rows(self, rng):
        vocab = Vocabulary(self.kb.attributes)
        table = random_table(len(vocab), 4, rng)
        result = trigger(self.kb, ["ent1", "ent2"], table, vocab, top_n=2)
        assert result.contributing_attributes == ["b", "a"]
        assert_allclose(result.vector, table.matrix[vocab.index("b")] + table.matrix[vocab.index("a")])

    def test_no_entity_gives_zero_vector(self, rng):
        vocab = Vocabulary(self.kb.attributes)
        result = trigger(self.kb, ["hello", "there"], random_table(len(vocab), 4, rng), vocab, top_n=5)
        assert_array_equal(result.vector, np.zeros(4))
        assert result.contributing_attributes == []

    def test_top_n_must_be_positive(self):
        with pytest.raises(InputError):
            rank_attributes(self.kb, ["ent1"], top_n=0)

    def test_attributes_without_embedding_row_are_skipped(self, rng):
        kb = KnowledgeBase({"ent1": {"a": 3, "b": 1, "zz": 5}})
        vocab = Vocabulary(["a", "b"])
        table = random_table(len(vocab), 4, rng)
        assert rank_attributes(kb, ["ent1"], top_n=2) == ["zz", "a"]
        result = trigger(kb, ["ent1"], table, vocab, top_n=2)
        assert result.contributing_attributes == ["a", "b"]
        assert 0 not in result.attribute_ids
        assert_allclose(result.vector, table.matrix[vocab.index("a")] + table.matrix[vocab.index("b")])

    def test_insertion_order_does_not_matter(self, rng):
        rows = [("ent1", "a", 3), ("ent1", "b", 1), ("ent2", "b", 3), ("ent2", "c", 1)]
        forward, backward = KnowledgeBase(), KnowledgeBase()
        for entity, attribute, count in rows:
            forward.add(entity, attribute, count)
        for entity, attribute, count in reversed(rows):
            backward.add(entity, attribute, count)
        vocab = Vocabulary(forward.attributes)
        table = random_table(len(vocab), 4, rng)
        a = trigger(forward, ["ent2", "ent1"], table, vocab, top_n=3)
        b = trigger(backward, ["ent1", "ent2"], table, vocab, top_n=3)
        assert a.contributing_attributes == b.contributing_attributes
        assert_array_equal(a.vector, b.vector)

    def test_vector_norm_bounded_by_row_norms(self, rng):
        vocab = Vocabulary(self.kb.attributes)
        table = random_table(len(vocab), 4, rng)
        result = trigger(self.kb, ["ent1", "ent2"], table, vocab, top_n=3)
        bound = sum(np.linalg.norm(table.matrix[i]) for i in result.attribute_ids)
        assert np.linalg.norm(result.vector) <= bound + 1e-12

    def test_vector_distances_obey_triangle_inequality(self, rng):
        vocab = Vocabulary(self.kb.attributes)
        table = random_table(len(vocab), 4, rng)
        x, y, z = (trigger(self.kb, ctx, table, vocab, top_n=2).vector
                   for ctx in (["ent1"], ["ent2"], ["ent1", "ent2"]))
        assert np.linalg.norm(x - z) <= np.linalg.norm(x - y) + np.linalg.norm(y - z) + 1e-12
