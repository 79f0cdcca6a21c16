"""Fixed-dimension feature vectors from token sequences.

Three routes: bag-of-words counts over a training-fold vocabulary, mean
pooling over a pretrained word-embedding table, and precomputed per-issue
sentence vectors consumed from a provider file.
"""

from __future__ import annotations

import json
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vulnsieve.textprep import TokenizedDoc

DEFAULT_MAX_VOCAB = 5000


@dataclass(eq=False)
class FeatureVector:
    """One issue's real-valued features under one featurization."""

    issue_id: str
    values: np.ndarray
    featurization_name: str

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"non-finite feature values for issue {self.issue_id!r}")


class Vocabulary:
    """Ordered token-to-index map built from training-fold documents only.

    Keeps the ``max_size`` most frequent tokens; ties break lexicographically
    so construction is deterministic. Document frequencies are retained for
    the optional tf-idf weighting.
    """

    def __init__(self, tokens: Sequence[str], doc_freq: Sequence[int], n_docs: int) -> None:
        self.tokens = tuple(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.doc_freq = np.asarray(doc_freq, dtype=np.float64)
        self.n_docs = n_docs
        if len(self.index) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, docs: Iterable[TokenizedDoc], max_size: int = DEFAULT_MAX_VOCAB) -> "Vocabulary":
        counts: Counter[str] = Counter()
        doc_counts: Counter[str] = Counter()
        n_docs = 0
        for doc in docs:
            n_docs += 1
            counts.update(doc.tokens)
            doc_counts.update(set(doc.tokens))
        ranked = sorted(counts, key=lambda t: (-counts[t], t))[:max_size]
        return cls(ranked, [doc_counts[t] for t in ranked], n_docs)


def bow_vectorize(doc: TokenizedDoc, vocab: Vocabulary, tfidf: bool = False) -> FeatureVector:
    """Raw term counts over the vocabulary; out-of-vocabulary tokens ignored.

    With ``tfidf`` set, counts are weighted by smoothed inverse document
    frequency learned from the vocabulary's training documents.
    """
    if len(vocab) == 0:
        raise ValueError("vocabulary is empty")
    values = np.zeros(len(vocab), dtype=np.float64)
    for token in doc.tokens:
        idx = vocab.index.get(token)
        if idx is not None:
            values[idx] += 1.0
    if tfidf:
        idf = np.log((1.0 + vocab.n_docs) / (1.0 + vocab.doc_freq)) + 1.0
        values *= idf
    return FeatureVector(doc.issue_id, values, "bow")


def bow_matrix(docs: Sequence[TokenizedDoc], vocab: Vocabulary, tfidf: bool = False) -> np.ndarray:
    return np.stack([bow_vectorize(d, vocab, tfidf).values for d in docs]) if docs else np.zeros((0, len(vocab)))


class EmbeddingFormatError(ValueError):
    """An embedding or provider-vector file is malformed."""


class EmbeddingTable:
    """token -> d-dimensional vector map with a single shared dimension."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int) -> None:
        self.vectors = vectors
        self.dim = dim

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token in self.vectors


def load_embedding_table(path: Path | str) -> EmbeddingTable:
    """Parse whitespace-separated ``token v1 .. vd`` lines (GloVe text format).

    Rejects non-numeric values, dimension mismatches, duplicate tokens, and
    non-finite entries, naming the offending line. An empty file is an
    error.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            token, raw_values = parts[0], parts[1:]
            if not raw_values:
                raise EmbeddingFormatError(f"{path}:{line_no}: no values for token {token!r}")
            try:
                values = np.array([float(v) for v in raw_values], dtype=np.float64)
            except ValueError as exc:
                raise EmbeddingFormatError(f"{path}:{line_no}: non-numeric value ({exc})") from exc
            if not np.all(np.isfinite(values)):
                raise EmbeddingFormatError(f"{path}:{line_no}: non-finite value")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{line_no}: expected {dim} values, found {len(values)}"
                )
            if token in vectors:
                raise EmbeddingFormatError(f"{path}:{line_no}: duplicate token {token!r}")
            vectors[token] = values
    if dim is None:
        raise EmbeddingFormatError(f"{path}: empty table")
    return EmbeddingTable(vectors, dim)


def embed_mean(doc: TokenizedDoc, table: EmbeddingTable, name: str = "embedding") -> FeatureVector:
    """Arithmetic mean of in-table token vectors; zero vector if none match."""
    hits = [table.vectors[t] for t in doc.tokens if t in table.vectors]
    if hits:
        values = np.mean(hits, axis=0)
    else:
        values = np.zeros(table.dim, dtype=np.float64)
    return FeatureVector(doc.issue_id, values, name)


def provider_vectors(
    ids: Iterable[str], path: Path | str, name: str = "provider"
) -> dict[str, FeatureVector]:
    """Load precomputed sentence vectors for the requested issue ids.

    The file is JSON Lines ``{"id": ..., "vector": [...]}``. Every requested
    id must be present; missing ids are reported together. Vectors are
    dimension-checked and must be finite.
    """
    wanted = set(ids)
    found: dict[str, FeatureVector] = {}
    dim: int | None = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EmbeddingFormatError(f"{path}:{line_no}: bad JSON: {exc}") from exc
            if "id" not in rec or "vector" not in rec:
                raise EmbeddingFormatError(f"{path}:{line_no}: record needs 'id' and 'vector'")
            issue_id = str(rec["id"])
            values = np.asarray(rec["vector"], dtype=np.float64)
            if values.ndim != 1:
                raise EmbeddingFormatError(f"{path}:{line_no}: vector must be one-dimensional")
            if not np.all(np.isfinite(values)):
                raise EmbeddingFormatError(f"{path}:{line_no}: non-finite entry for id {issue_id!r}")
            if dim is None:
                dim = len(values)
            elif len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{line_no}: expected dimension {dim}, found {len(values)}"
                )
            if issue_id in wanted:
                found[issue_id] = FeatureVector(issue_id, values, name)
    missing = sorted(wanted - found.keys())
    if missing:
        raise EmbeddingFormatError(f"{path}: missing vectors for ids: {', '.join(missing)}")
    return found
