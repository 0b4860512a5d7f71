import numpy as np
import pytest
from numpy.testing import assert_array_equal

from app.exceptions import FormatError, ShapeError
from app.ml.embeddings import (
    PAD, UNK, UNK_INDEX, EmbeddingTable, Vocabulary, build_vocabulary, detokenize, load_text_embeddings,
    lookup, random_table, save_text_embeddings, tokenize,
)
from app.ml.mathcore import Rng


class TestTokenize:
    def test_word_level(self):
        assert tokenize("how  do I\tinstall") == ["how", "do", "I", "install"]

    def test_char_level_skips_spaces(self):
        assert tokenize("你好 吗", level="char") == ["你", "好", "吗"]
        assert detokenize(["你", "好"], level="char") == "你好"

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            tokenize("x", level="byte")


class TestVocabulary:
    def test_reserved_indices(self):
        vocab = Vocabulary(["a"])
        assert vocab.index(UNK) == 0
        assert vocab.index(PAD) == 1
        assert vocab.index("a") == 2

    def test_unknown_maps_to_unk(self):
        assert Vocabulary(["a"]).index("zzz") == UNK_INDEX

    def test_frequency_then_lexicographic_order(self):
        vocab = build_vocabulary([["b", "a", "c"], ["c", "b"]])
        assert vocab.to_list() == [UNK, PAD, "b", "c", "a"]

    def test_min_freq(self):
        vocab = build_vocabulary([["a", "a", "b"]], min_freq=2)
        assert "b" not in vocab

    def test_from_list_requires_reserved_prefix(self):
        with pytest.raises(FormatError):
            Vocabulary.from_list(["a", "b"])

    def test_from_list_rejects_duplicates(self):
        with pytest.raises(FormatError):
            Vocabulary.from_list([UNK, PAD, "a", "a"])


class TestLookup:
    def test_unknown_token_uses_unk_row(self, rng):
        vocab = Vocabulary(["kernel"])
        table = random_table(len(vocab), 4, rng)
        rows = lookup(table, ["kernel", "zzzqq"], vocab)
        assert_array_equal(rows[1], table.matrix[UNK_INDEX])
        assert_array_equal(rows[0], table.matrix[2])

    def test_empty_sequence(self, rng):
        vocab = Vocabulary(["a"])
        assert lookup(random_table(3, 5, rng), [], vocab).shape == (0, 5)

    def test_size_mismatch(self, rng):
        with pytest.raises(ShapeError):
            lookup(random_table(4, 2, rng), ["a"], Vocabulary(["a"]))

    def test_random_table_range(self, rng):
        table = random_table(50, 8, rng)
        assert np.all(np.abs(table.matrix) <= 0.1)


class TestTextFormat:
    def test_known_rows_are_copied(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("kernel 1.0 2.0\nother 3.0 4.0\n", encoding="utf-8")
        vocab = Vocabulary(["kernel", "panic"])
        table = load_text_embeddings(path, vocab, embed_dim=2, rng=Rng(3))
        assert_array_equal(table.matrix[vocab.index("kernel")], [1.0, 2.0])
        assert np.all(np.abs(table.matrix[vocab.index("panic")]) <= 0.1)

    def test_dimension_mismatch_names_line(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("a 1 2\nb 1 2 3\n", encoding="utf-8")
        with pytest.raises(FormatError, match="line 2"):
            load_text_embeddings(path, Vocabulary(["a"]))

    def test_configured_dimension_must_agree(self, tmp_path):
        path = tmp_path / "vectors.txt"
        path.write_text("a 1 2\n", encoding="utf-8")
        with pytest.raises(FormatError):
            load_text_embeddings(path, Vocabulary(["a"]), embed_dim=3)

    def test_save_then_load_is_exact(self, tmp_path, rng):
        vocab = Vocabulary(["x", "y"])
        table = EmbeddingTable(rng.normal((len(vocab), 3)))
        path = tmp_path / "out.txt"
        save_text_embeddings(table, vocab, path)
        assert_array_equal(load_text_embeddings(path, vocab).matrix, table.matrix)
