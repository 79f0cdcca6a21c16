from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnsieve.featurizer import (
    EmbeddingFormatError,
    EmbeddingTable,
    FeatureVector,
    Vocabulary,
    bow_vectorize,
    embed_mean,
    load_embedding_table,
    provider_vectors,
)
from vulnsieve.textprep import TokenizedDoc


def doc(tokens: list[str], issue_id: str = "x#1") -> TokenizedDoc:
    return TokenizedDoc(issue_id, tuple(tokens))


class TestBow:
    def test_counts(self) -> None:
        vocab = Vocabulary(["a", "b", "c"], [1, 1, 1], 1)
        assert bow_vectorize(doc(["b", "c", "c"]), vocab).values.tolist() == [0.0, 1.0, 2.0]

    def test_oov_only_gives_zero_vector(self) -> None:
        vocab = Vocabulary(["a"], [1], 1)
        assert bow_vectorize(doc(["z", "q"]), vocab).values.tolist() == [0.0]

    def test_repeated_token(self) -> None:
        vocab = Vocabulary(["a"], [1], 1)
        assert bow_vectorize(doc(["a", "a", "a"]), vocab).values.tolist() == [3.0]

    def test_empty_vocabulary_rejected(self) -> None:
        with pytest.raises(ValueError):
            bow_vectorize(doc(["a"]), Vocabulary([], [], 0))

    def test_vocab_cap_keeps_most_frequent_with_lexicographic_ties(self) -> None:
        docs = [doc(["b", "b", "c", "c", "a"], f"d{i}") for i in range(2)]
        vocab = Vocabulary.build(docs, max_size=2)
        assert vocab.tokens == ("b", "c")

    def test_tfidf_flag_changes_weighting_only(self) -> None:
        docs = [doc(["a", "b"], "d0"), doc(["a"], "d1")]
        vocab = Vocabulary.build(docs)
        raw = bow_vectorize(doc(["a", "b"]), vocab).values
        weighted = bow_vectorize(doc(["a", "b"]), vocab, tfidf=True).values
        assert raw.shape == weighted.shape
        # The rarer token gains relative weight under idf.
        assert weighted[vocab.index["b"]] > weighted[vocab.index["a"]]

    @given(st.lists(st.sampled_from("abcde"), max_size=40))
    @settings(max_examples=100, deadline=None)
    def test_entries_sum_to_in_vocab_count(self, tokens: list[str]) -> None:
        vocab = Vocabulary(["a", "b", "c"], [1, 1, 1], 1)
        total = bow_vectorize(doc(tokens), vocab).values.sum()
        assert total == sum(1 for t in tokens if t in {"a", "b", "c"})


class TestEmbedMean:
    TABLE = EmbeddingTable({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}, 2)

    def test_mean_of_two(self) -> None:
        assert embed_mean(doc(["a", "b"]), self.TABLE).values.tolist() == [0.5, 0.5]

    def test_identical_tokens(self) -> None:
        assert embed_mean(doc(["a", "a"]), self.TABLE).values.tolist() == [1.0, 0.0]

    def test_all_oov_gives_zero_vector(self) -> None:
        assert embed_mean(doc(["c"]), self.TABLE).values.tolist() == [0.0, 0.0]

    @given(st.permutations(["a", "b", "a", "c", "b"]))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariance(self, tokens) -> None:
        base = embed_mean(doc(["a", "b", "a", "c", "b"]), self.TABLE).values
        assert np.allclose(embed_mean(doc(list(tokens)), self.TABLE).values, base)


class TestLoadTable:
    def test_two_lines(self, tmp_path) -> None:
        path = tmp_path / "emb.txt"
        path.write_text("a 1 2 3\nb 4 5 6\n")
        table = load_embedding_table(path)
        assert len(table) == 2 and table.dim == 3

    def test_dimension_mismatch_names_line(self, tmp_path) -> None:
        path = tmp_path / "emb.txt"
        path.write_text("a 1 2 3\nb 4 5\n")
        with pytest.raises(EmbeddingFormatError, match=":2:"):
            load_embedding_table(path)

    def test_empty_file(self, tmp_path) -> None:
        path = tmp_path / "emb.txt"
        path.write_text("")
        with pytest.raises(EmbeddingFormatError, match="empty table"):
            load_embedding_table(path)

    def test_non_numeric_names_line(self, tmp_path) -> None:
        path = tmp_path / "emb.txt"
        path.write_text("a 1 2\nb x 2\n")
        with pytest.raises(EmbeddingFormatError, match=":2:"):
            load_embedding_table(path)

    def test_duplicate_token(self, tmp_path) -> None:
        path = tmp_path / "emb.txt"
        path.write_text("a 1 2\na 3 4\n")
        with pytest.raises(EmbeddingFormatError, match="duplicate"):
            load_embedding_table(path)

    def test_non_finite_rejected(self, tmp_path) -> None:
        path = tmp_path / "emb.txt"
        path.write_text("a nan 2\n")
        with pytest.raises(EmbeddingFormatError, match="non-finite"):
            load_embedding_table(path)


class TestProviderVectors:
    def test_all_requested_found(self, tmp_path) -> None:
        path = tmp_path / "vec.jsonl"
        path.write_text('{"id": "1", "vector": [1, 2]}\n{"id": "2", "vector": [3, 4]}\n')
        got = provider_vectors(["1", "2"], path)
        assert set(got) == {"1", "2"}
        assert got["1"].values.tolist() == [1.0, 2.0]

    def test_missing_id_listed(self, tmp_path) -> None:
        path = tmp_path / "vec.jsonl"
        path.write_text('{"id": "1", "vector": [1, 2]}\n')
        with pytest.raises(EmbeddingFormatError, match="3"):
            provider_vectors(["1", "3"], path)

    def test_non_finite_entry_rejected(self, tmp_path) -> None:
        path = tmp_path / "vec.jsonl"
        path.write_text('{"id": "1", "vector": [1, null]}\n')
        with pytest.raises(EmbeddingFormatError):
            provider_vectors(["1"], path)

    def test_dimension_checked(self, tmp_path) -> None:
        path = tmp_path / "vec.jsonl"
        path.write_text('{"id": "1", "vector": [1, 2]}\n{"id": "2", "vector": [1]}\n')
        with pytest.raises(EmbeddingFormatError, match="dimension"):
            provider_vectors(["1", "2"], path)


def test_feature_vector_rejects_non_finite() -> None:
    with pytest.raises(ValueError):
        FeatureVector("x", np.array([1.0, np.inf]), "bow")
