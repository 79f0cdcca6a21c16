"""Stratified 10-fold cross-validation with nested grid search and metrics.

Leakage control is structural: vocabularies, feature scaling, and minority
oversampling are all fitted inside training folds only; grid points are
selected by an inner 3-fold search on training data; the reported AUC per
cell is the arithmetic mean of the per-fold AUCs.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from vulnsieve.classifiers import ModelKind, default_grid, fit, score_many
from vulnsieve.featurizer import (
    DEFAULT_MAX_VOCAB,
    EmbeddingTable,
    FeatureVector,
    Vocabulary,
    bow_matrix,
    embed_mean,
)
from vulnsieve.issue_store import Label
from vulnsieve.textprep import TokenizedDoc

logger = logging.getLogger(__name__)

CLASSIFIER_ORDER = ("gnb", "svm", "rf", "lr")
FEATURIZATION_ORDER = ("bow", "bert", "glove", "w2v")
INNER_FOLDS = 3


def derive_seed(*parts: object) -> int:
    """Stable sub-seed from a master seed and a context path."""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "big")


@dataclass(frozen=True)
class CVSplit:
    """Fold index per issue id; folds are disjoint, covering, stratified."""

    fold_of: dict[str, int] = field(hash=False)
    k: int = 10

    def test_ids(self, fold: int) -> list[str]:
        return [i for i, f in self.fold_of.items() if f == fold]


def make_folds(ids: Sequence[str], y: Sequence[int], k: int, seed: int) -> CVSplit:
    """Stratified fold assignment: per-class counts differ by at most one."""
    if len(ids) != len(y):
        raise ValueError("ids and labels must align")
    if k < 2:
        raise ValueError("need at least 2 folds")
    rng = random.Random(seed)
    fold_of: dict[str, int] = {}
    for cls in sorted(set(y)):
        members = [i for i, label in zip(ids, y) if label == cls]
        rng.shuffle(members)
        for pos, issue_id in enumerate(members):
            fold_of[issue_id] = pos % k
    return CVSplit(fold_of=fold_of, k=k)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative, ties 0.5.

    Mann-Whitney midrank formulation; requires both classes present.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    cum = np.cumsum(counts)
    avg_rank = (cum - counts) + (counts + 1) / 2.0
    ranks = avg_rank[inverse]
    u = float(ranks[y == 1].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def oversample_indices(y: Sequence[int], seed: int) -> np.ndarray:
    """Indices realizing minority oversampling to exact class parity.

    Originals are kept; extra minority rows are drawn with replacement until
    class counts are equal. Already-balanced input comes back unchanged.
    """
    y = np.asarray(y, dtype=np.int64)
    idx = np.arange(len(y))
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    if n_pos == n_neg:
        return idx
    minority = 1 if n_pos < n_neg else 0
    deficit = abs(n_neg - n_pos)
    pool = idx[y == minority]
    rng = np.random.default_rng(seed)
    extra = rng.choice(pool, size=deficit, replace=True)
    return np.concatenate([idx, extra])


def oversample_training_fold(
    X: np.ndarray, y: np.ndarray, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Balanced copy of a training fold plus the source row of each sample."""
    sel = oversample_indices(y, seed)
    return X[sel], np.asarray(y)[sel], sel


def pass_at_k(attempt_outcomes: Sequence[Sequence[bool]], k: int = 3) -> float:
    """Fraction of issues with at least one correct attempt out of ``k``."""
    if not attempt_outcomes:
        raise ValueError("no attempts recorded")
    for row_no, row in enumerate(attempt_outcomes):
        if len(row) != k:
            raise ValueError(f"issue {row_no} has {len(row)} attempts, expected {k}")
    return sum(1 for row in attempt_outcomes if any(row)) / len(attempt_outcomes)


# ---------------------------------------------------------------------------
# Featurizations
# ---------------------------------------------------------------------------


class Featurization(Protocol):
    name: str

    def fit(self, train_docs: Sequence[TokenizedDoc]) -> Any: ...

    def transform(self, docs: Sequence[TokenizedDoc], state: Any) -> np.ndarray: ...


class BowFeaturization:
    """Counts over a vocabulary rebuilt from each training fold."""

    def __init__(self, max_vocab: int = DEFAULT_MAX_VOCAB, tfidf: bool = False) -> None:
        self.name = "bow"
        self.max_vocab = max_vocab
        self.tfidf = tfidf

    def fit(self, train_docs: Sequence[TokenizedDoc]) -> Vocabulary:
        return Vocabulary.build(train_docs, self.max_vocab)

    def transform(self, docs: Sequence[TokenizedDoc], state: Vocabulary) -> np.ndarray:
        return bow_matrix(docs, state, self.tfidf)


class MeanEmbeddingFeaturization:
    """Mean pooling over a fixed pretrained word-vector table."""

    def __init__(self, table: EmbeddingTable, name: str) -> None:
        self.name = name
        self.table = table

    def fit(self, train_docs: Sequence[TokenizedDoc]) -> None:
        return None

    def transform(self, docs: Sequence[TokenizedDoc], state: None) -> np.ndarray:
        if not docs:
            return np.zeros((0, self.table.dim))
        return np.stack([embed_mean(d, self.table, self.name).values for d in docs])


class ProviderFeaturization:
    """Precomputed per-issue sentence vectors keyed by issue id."""

    def __init__(self, vectors: dict[str, FeatureVector], name: str) -> None:
        self.name = name
        self.vectors = vectors

    def fit(self, train_docs: Sequence[TokenizedDoc]) -> None:
        return None

    def transform(self, docs: Sequence[TokenizedDoc], state: None) -> np.ndarray:
        missing = sorted(d.issue_id for d in docs if d.issue_id not in self.vectors)
        if missing:
            raise KeyError(f"no provider vectors for ids: {', '.join(missing)}")
        if not docs:
            return np.zeros((0, 0))
        return np.stack([self.vectors[d.issue_id].values for d in docs])


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------


@dataclass
class CVResult:
    classifier: str
    featurization: str
    fold_aucs: list[float | None]
    mean_auc: float
    chosen_hyper: list[dict[str, Any]]
    k: int
    flags: list[str] = field(default_factory=list)
    diagnostics: dict[str, Any] | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "classifier": self.classifier,
            "featurization": self.featurization,
            "fold_aucs": self.fold_aucs,
            "mean_auc": self.mean_auc,
            "chosen_hyper": self.chosen_hyper,
            "k": self.k,
            "flags": self.flags,
        }


def _labels_to_binary(docs: Sequence[TokenizedDoc]) -> np.ndarray:
    y = np.empty(len(docs), dtype=np.int64)
    for i, doc in enumerate(docs):
        if doc.label is None:
            raise ValueError(f"issue {doc.issue_id!r} is unlabeled; cross-validation needs labels")
        y[i] = 1 if doc.label is Label.VULNERABILITY else 0
    return y


def _fit_and_score(
    kind: ModelKind,
    hyper: dict[str, Any],
    featurization: Featurization,
    train_docs: Sequence[TokenizedDoc],
    train_y: np.ndarray,
    test_docs: Sequence[TokenizedDoc],
    test_y: np.ndarray,
    seed: int,
) -> tuple[float | None, dict[str, Any]]:
    """One (train, test) evaluation; returns (auc or None, diagnostics)."""
    diag: dict[str, Any] = {}
    if len(np.unique(test_y)) < 2:
        return None, diag
    state = featurization.fit(train_docs)
    X_train = featurization.transform(train_docs, state)
    X_test = featurization.transform(test_docs, state)
    sel = oversample_indices(train_y, derive_seed(seed, "oversample"))
    model = fit(kind, X_train[sel], train_y[sel], hyper, seed=derive_seed(seed, "fit"))
    scores = score_many(model, X_test)
    diag["oversample_sel"] = sel
    if isinstance(state, Vocabulary):
        diag["vocab_tokens"] = state.tokens
    return auc(scores, test_y), diag


def _evaluate_fold(
    fold: int,
    docs: Sequence[TokenizedDoc],
    y: np.ndarray,
    split: CVSplit,
    featurization: Featurization,
    kind: ModelKind,
    grid: Sequence[dict[str, Any]],
    seed: int,
    flags: list[str],
    collect: bool,
) -> tuple[float | None, dict[str, Any], dict[str, Any]]:
    train_idx = [i for i, d in enumerate(docs) if split.fold_of[d.issue_id] != fold]
    test_idx = [i for i, d in enumerate(docs) if split.fold_of[d.issue_id] == fold]
    train_docs = [docs[i] for i in train_idx]
    test_docs = [docs[i] for i in test_idx]
    train_y = y[train_idx]
    test_y = y[test_idx]

    chosen = dict(grid[0])
    if len(grid) > 1:
        inner_k = min(INNER_FOLDS, int(np.bincount(train_y, minlength=2).min()))
        if inner_k >= 2:
            inner_split = make_folds(
                [d.issue_id for d in train_docs],
                train_y.tolist(),
                inner_k,
                derive_seed(seed, "inner", fold),
            )
            best_mean = -np.inf
            for hyper in grid:
                inner_aucs = []
                for inner_fold in range(inner_k):
                    it_idx = [
                        i for i, d in enumerate(train_docs)
                        if inner_split.fold_of[d.issue_id] != inner_fold
                    ]
                    iv_idx = [
                        i for i, d in enumerate(train_docs)
                        if inner_split.fold_of[d.issue_id] == inner_fold
                    ]
                    inner_auc, _ = _fit_and_score(
                        kind,
                        hyper,
                        featurization,
                        [train_docs[i] for i in it_idx],
                        train_y[it_idx],
                        [train_docs[i] for i in iv_idx],
                        train_y[iv_idx],
                        derive_seed(seed, "grid", fold, inner_fold, repr(sorted(hyper.items()))),
                    )
                    if inner_auc is not None:
                        inner_aucs.append(inner_auc)
                mean_inner = float(np.mean(inner_aucs)) if inner_aucs else -np.inf
                if mean_inner > best_mean:
                    best_mean = mean_inner
                    chosen = dict(hyper)
        else:
            flags.append(f"fold {fold}: training data too small for inner search; using first grid point")

    fold_auc, diag = _fit_and_score(
        kind, chosen, featurization, train_docs, train_y, test_docs, test_y,
        derive_seed(seed, "outer", fold),
    )
    if fold_auc is None:
        flags.append(f"fold {fold}: single-class test fold skipped")
    diagnostics: dict[str, Any] = {}
    if collect:
        diagnostics = {
            "train_ids": [d.issue_id for d in train_docs],
            "test_ids": [d.issue_id for d in test_docs],
            "oversampled_ids": [train_docs[i].issue_id for i in diag.get("oversample_sel", [])],
            "vocab_tokens": diag.get("vocab_tokens"),
        }
    return fold_auc, chosen, diagnostics


def cross_validate(
    docs: Sequence[TokenizedDoc],
    featurization: Featurization,
    kind: ModelKind | str,
    seed: int = 0,
    k: int = 10,
    grid: Sequence[dict[str, Any]] | None = None,
    n_jobs: int = 1,
    collect_diagnostics: bool = False,
) -> CVResult:
    """Nested stratified cross-validation for one (classifier, featurization) cell.

    Grid points are ranked by inner 3-fold mean AUC on training data only
    (ties keep the first grid point); the winner is refitted on the full
    training fold and scored on the held-out fold. Degenerate test folds are
    skipped and flagged. If a class has fewer members than ``k`` the fold
    count is reduced with a warning.
    """
    kind = ModelKind(kind)
    y = _labels_to_binary(docs)
    flags: list[str] = []
    min_class = int(np.bincount(y, minlength=2).min())
    if min_class < 2:
        raise ValueError("cross-validation needs at least 2 issues per class")
    k_used = k
    if min_class < k:
        k_used = max(2, min_class)
        flags.append(f"reduced folds from {k} to {k_used}: smallest class has {min_class} issues")
        logger.warning("reducing folds from %d to %d (class size %d)", k, k_used, min_class)
    split = make_folds([d.issue_id for d in docs], y.tolist(), k_used, derive_seed(seed, "folds"))
    grid = list(grid) if grid is not None else default_grid(kind)

    def run(fold: int) -> tuple[float | None, dict[str, Any], dict[str, Any]]:
        return _evaluate_fold(
            fold, docs, y, split, featurization, kind, grid, seed, flags, collect_diagnostics
        )

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            outcomes = list(pool.map(run, range(k_used)))
    else:
        outcomes = [run(fold) for fold in range(k_used)]

    fold_aucs = [o[0] for o in outcomes]
    valid = [a for a in fold_aucs if a is not None]
    if not valid:
        raise ValueError("every fold was degenerate; cannot report a mean AUC")
    result = CVResult(
        classifier=kind.value,
        featurization=featurization.name,
        fold_aucs=fold_aucs,
        mean_auc=float(np.mean(valid)),
        chosen_hyper=[o[1] for o in outcomes],
        k=k_used,
        flags=flags,
    )
    if collect_diagnostics:
        result.diagnostics = {
            "split": split,
            "folds": [o[2] for o in outcomes],
        }
    return result


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def _ordered(keys: set[str], canon: Sequence[str]) -> list[str]:
    known = [c for c in canon if c in keys]
    extras = sorted(keys - set(canon))
    return known + extras


def write_matrix_csv(cells: dict[tuple[str, str], float], path: Path | str) -> None:
    """Emit the classifier-by-featurization AUC matrix.

    Rows and columns follow the canonical order (GNB/SVM/RF/LR by
    BoW/BERT/GloVe/W2V) restricted to what was computed; absent cells render
    empty, never zero.
    """
    if not cells:
        raise ValueError("no cells computed")
    rows = _ordered({c for c, _ in cells}, CLASSIFIER_ORDER)
    cols = _ordered({f for _, f in cells}, FEATURIZATION_ORDER)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["classifier", *cols])
        for row in rows:
            writer.writerow(
                [row.upper()]
                + [
                    f"{cells[(row, col)]:.4f}" if (row, col) in cells else ""
                    for col in cols
                ]
            )


def build_report(
    results: Sequence[CVResult],
    llm: dict[str, Any] | None = None,
    mlm: dict[str, Any] | None = None,
    metadata: dict[str, Any] | None = None,
) -> dict[str, Any]:
    """Assemble the full evaluation report mirrored by the matrix CSV."""
    for res in results:
        if not 0.0 <= res.mean_auc <= 1.0:
            raise ValueError(f"AUC out of range in cell {res.classifier}/{res.featurization}")
    return {
        "matrix": {
            f"{res.classifier}/{res.featurization}": res.mean_auc for res in results
        },
        "cells": [res.to_json() for res in results],
        "llm": llm,
        "mlm": mlm,
        "metadata": metadata or {},
    }


def write_report_json(report: dict[str, Any], path: Path | str) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cells_from_results(results: Sequence[CVResult]) -> dict[tuple[str, str], float]:
    return {(res.classifier, res.featurization): res.mean_auc for res in results}
