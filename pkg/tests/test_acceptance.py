"""Acceptance suite: one test per release criterion, at stated tolerances.

Each test enforces its numeric tolerance exactly as pinned and asserts its
wall-clock budget. The terminal summary prints one PASS/FAIL line per
criterion (see conftest).
"""

from __future__ import annotations

import csv
import random
import time
from collections import defaultdict

import numpy as np
import pytest

from vulnsieve.classifiers import logistic_loss_grad
from vulnsieve.evaluation import BowFeaturization, auc, cross_validate, pass_at_k
from vulnsieve.issue_store import Label, save_corpus
from vulnsieve.mask_harness import (
    MASK_TOKEN,
    evaluate_masked,
    reference_loss_grad,
)
from vulnsieve.sampler import SamplingPlan, compute_sample_size
from vulnsieve.surrogate_miner import (
    RankedKeyword,
    finalize_surrogates,
    rake_extract,
    review_cycle,
)
from vulnsieve.synth import (
    separable_doc_corpus,
    shuffle_labels,
    synthetic_corpus,
    write_stub_embedding_table,
    write_stub_provider_vectors,
)
from vulnsieve.textprep import PrepResources, TokenizedDoc, preprocess_corpus


class Budget:
    def __init__(self, seconds: float) -> None:
        self.seconds = seconds
        self.start = time.monotonic()

    def check(self) -> None:
        elapsed = time.monotonic() - self.start
        assert elapsed < self.seconds, f"exceeded {self.seconds}s budget: {elapsed:.1f}s"


def test_sample_sizing_reproduces_370() -> None:
    compute_sample_size(SamplingPlan(100))  # warm the code path
    start = time.monotonic()
    n = compute_sample_size(SamplingPlan(9564, 0.95, 0.05))
    elapsed = time.monotonic() - start
    assert n == 370
    assert elapsed < 0.001


def test_auc_matches_brute_force_on_500_random_instances() -> None:
    budget = Budget(10.0)
    rng = np.random.default_rng(20240301)
    for trial in range(500):
        n = int(rng.integers(2, 1001))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        if trial % 2 == 0:
            scores = rng.integers(0, max(2, n // 10), size=n).astype(float)  # ties
        else:
            scores = rng.random(n)
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        expected = wins / (len(pos) * len(neg))
        assert abs(auc(scores, labels) - expected) <= 1e-9
    budget.check()


def _rake_oracle(docs, stopwords):
    candidates = []
    for doc in docs:
        run: list[str] = []
        for token in doc:
            if token in stopwords:
                if run:
                    candidates.append(tuple(run))
                run = []
            else:
                run.append(token)
        if run:
            candidates.append(tuple(run))
    freq: dict[str, int] = defaultdict(int)
    deg: dict[str, int] = defaultdict(int)
    for cand in candidates:
        for word in cand:
            freq[word] += 1
            deg[word] += len(cand)
    scored = {c: sum(deg[w] / freq[w] for w in c) for c in set(candidates)}
    return sorted(scored.items(), key=lambda kv: (-kv[1], " ".join(kv[0])))


def test_rake_matches_direct_definition_oracle() -> None:
    budget = Budget(5.0)
    hand = rake_extract(
        [["buffer", "overflow", "in", "parser", "causes", "buffer", "overflow"]],
        {"in", "causes"},
    )
    assert hand[0].text == "buffer overflow" and hand[0].score == 4.0

    rng = random.Random(77)
    vocabulary = [f"w{i}" for i in range(12)] + ["s1", "s2", "s3"]
    stopwords = {"s1", "s2", "s3"}
    for _ in range(200):
        docs = [
            [rng.choice(vocabulary) for _ in range(rng.randint(0, 50))]
            for _ in range(rng.randint(1, 5))
        ]
        got = [(kw.phrase, kw.score) for kw in rake_extract(docs, stopwords)]
        assert got == _rake_oracle(docs, stopwords)
    budget.check()


def test_gradients_match_central_finite_differences() -> None:
    budget = Budget(5.0)
    rng = np.random.default_rng(9)
    eps = 1e-6

    X = rng.normal(0, 1, (50, 8))
    y = (rng.random(50) > 0.5).astype(np.int64)
    for _ in range(20):
        params = rng.normal(0, 1, 9)
        _, grad = logistic_loss_grad(params, X, y, 0.1)
        for i in rng.choice(9, size=3, replace=False):
            up, down = params.copy(), params.copy()
            up[i] += eps
            down[i] -= eps
            fd = (
                logistic_loss_grad(up, X, y, 0.1)[0] - logistic_loss_grad(down, X, y, 0.1)[0]
            ) / (2 * eps)
            assert abs(grad[i] - fd) / max(abs(fd), 1e-8) <= 1e-4

    n_vocab, n_classes = 6, 5
    Xm = rng.integers(0, 3, size=(40, n_vocab)).astype(float)
    targets = rng.integers(0, n_classes, size=40)
    for _ in range(20):
        params = rng.normal(0, 1, n_vocab * n_classes + n_classes)
        _, grad = reference_loss_grad(params, Xm, targets, n_vocab, n_classes)
        for i in rng.choice(len(params), size=3, replace=False):
            up, down = params.copy(), params.copy()
            up[i] += eps
            down[i] -= eps
            fd = (
                reference_loss_grad(up, Xm, targets, n_vocab, n_classes)[0]
                - reference_loss_grad(down, Xm, targets, n_vocab, n_classes)[0]
            ) / (2 * eps)
            assert abs(grad[i] - fd) / max(abs(fd), 1e-8) <= 1e-4
    budget.check()


def test_classifier_sanity_separable_and_shuffled() -> None:
    budget = Budget(120.0)
    docs = separable_doc_corpus(n=200, vocab_size=20, seed=42)
    for kind in ("gnb", "svm", "rf", "lr"):
        result = cross_validate(docs, BowFeaturization(), kind, seed=0, k=10, n_jobs=2)
        assert result.mean_auc >= 0.95, f"{kind}: {result.mean_auc:.3f}"

    for kind in ("gnb", "svm", "rf", "lr"):
        aucs = []
        for seed in range(10):
            shuffled = shuffle_labels(docs, seed=seed)
            aucs.append(
                cross_validate(shuffled, BowFeaturization(), kind, seed=seed, k=10, n_jobs=2).mean_auc
            )
        mean = float(np.mean(aucs))
        assert 0.4 <= mean <= 0.6, f"{kind} shuffled mean: {mean:.3f}"
    budget.check()


def test_leakage_suite() -> None:
    budget = Budget(30.0)
    corpus = synthetic_corpus(820, 63, seed=11)
    docs = preprocess_corpus(corpus, PrepResources.load())
    result = cross_validate(
        docs, BowFeaturization(), "gnb", seed=0, k=10, collect_diagnostics=True
    )
    split = result.diagnostics["split"]
    all_ids = sorted(d.issue_id for d in docs)

    # Disjoint and covering.
    assert sorted(split.fold_of) == all_ids
    # Stratified within one per class.
    label_of = {d.issue_id: d.label for d in docs}
    for cls in (Label.VULNERABILITY, Label.NON_VULNERABILITY):
        per_fold = [
            sum(1 for i, f in split.fold_of.items() if f == fold and label_of[i] is cls)
            for fold in range(split.k)
        ]
        assert max(per_fold) - min(per_fold) <= 1
    # Oversampled duplicates stay inside the training fold; vocabulary is
    # built from training tokens only.
    train_tokens = {d.issue_id: set(d.tokens) for d in docs}
    for detail in result.diagnostics["folds"]:
        assert not set(detail["test_ids"]) & set(detail["oversampled_ids"])
        allowed = set().union(*(train_tokens[i] for i in detail["train_ids"]))
        assert set(detail["vocab_tokens"]) <= allowed
    budget.check()


def test_surrogate_pipeline_disjointness_and_review_round_trip(tmp_path) -> None:
    budget = Budget(5.0)
    rng = random.Random(123)
    universe = [f"t{i}" for i in range(30)]
    for _ in range(1000):
        pos = [rng.choice(universe) for _ in range(rng.randint(1, 25))]
        neg = [rng.choice(universe) for _ in range(rng.randint(1, 25))]
        try:
            surrogates = finalize_surrogates(pos, neg)
        except ValueError:
            continue
        assert not set(surrogates.positive) & set(surrogates.negative)

    ranked = [RankedKeyword((f"kw{i}",), float(200 - i)) for i in range(150)]
    review_path = tmp_path / "review.csv"
    assert review_cycle(ranked, review_path, k=100) is None
    kept = review_cycle(ranked, review_path, k=100)
    assert kept == ranked[:100]  # blank verdicts keep everything, order intact
    budget.check()


def test_masking_arithmetic_exposure_bounds_accuracy() -> None:
    budget = Budget(5.0)
    from vulnsieve.surrogate_miner import SurrogateSet

    surrogates = SurrogateSet(
        tuple(f"p{i}" for i in range(10)), tuple(f"n{i}" for i in range(10))
    )

    class HintOracle:
        def predict(self, context: list[str]) -> list[str]:
            pos = context.index(MASK_TOKEN)
            target = context[pos - 1].removeprefix("cue-")
            return [target, *[c for c in surrogates.union if c != target]]

    docs = []
    for i in range(40):
        s = surrogates.positive[i % 10]
        docs.append(
            TokenizedDoc(f"pos{i}", ("start", f"cue-{s}", s, "end"), Label.VULNERABILITY)
        )
    for i in range(60):
        docs.append(TokenizedDoc(f"neg{i}", ("plain", "text"), Label.NON_VULNERABILITY))

    result = evaluate_masked(
        docs, surrogates, predictor_factory=lambda train, seed: HintOracle(), folds=10, seed=0
    )
    assert result.overall_accuracy == 0.40
    assert result.mean_accuracy == pytest.approx(0.40, abs=1e-12)
    assert result.exposed_accuracy == 1.0

    unexposed = [
        TokenizedDoc(f"u{i}", ("nothing", "here"), Label.VULNERABILITY if i % 2 else Label.NON_VULNERABILITY)
        for i in range(20)
    ]
    result = evaluate_masked(unexposed, surrogates, folds=5, seed=0)
    assert result.mean_accuracy == 0.0
    assert result.exposure_fraction == 0.0
    assert result.exposed_accuracy is None  # undefined without exposed issues
    budget.check()


def test_pass_at_k_monotone_and_any_correct() -> None:
    budget = Budget(1.0)
    assert pass_at_k([[False, True, False]], 3) == 1.0  # the [N, Y, N] case
    rng = random.Random(5)
    for _ in range(1000):
        rows = [
            [rng.random() < 0.3 for _ in range(3)] for _ in range(rng.randint(1, 40))
        ]
        assert pass_at_k(rows, 3) >= pass_at_k([[r[0]] for r in rows], 1)
    budget.check()


def test_end_to_end_smoke_16_cells(tmp_path) -> None:
    budget = Budget(300.0)
    from vulnsieve.cli import EXIT_OK, dispatch
    from vulnsieve.featurizer import load_embedding_table

    corpus = synthetic_corpus(820, 63, seed=2024)
    assert sum(1 for li in corpus if li.label is Label.VULNERABILITY) == 63
    corpus_path = tmp_path / "corpus.jsonl"
    save_corpus(corpus, corpus_path)

    glove = tmp_path / "glove.txt"
    w2v = tmp_path / "w2v.txt"
    write_stub_embedding_table(glove, dim=16, seed=1)
    write_stub_embedding_table(w2v, dim=24, seed=2)
    docs = preprocess_corpus(corpus, PrepResources.load())
    bert = tmp_path / "bert.jsonl"
    write_stub_provider_vectors(bert, docs, load_embedding_table(glove), seed=3)

    out = tmp_path / "run"
    code = dispatch(
        [
            "--seed", "7",
            "--jobs", "2",
            "train",
            "--corpus", str(corpus_path),
            "--features", "bow,bert,glove,w2v",
            "--models", "gnb,svm,rf,lr",
            "--glove-table", str(glove),
            "--w2v-table", str(w2v),
            "--bert-vectors", str(bert),
            "--out", str(out),
        ]
    )
    assert code == EXIT_OK
    rows = list(csv.reader((out / "matrix.csv").read_text().splitlines()))
    assert rows[0] == ["classifier", "bow", "bert", "glove", "w2v"]
    assert [r[0] for r in rows[1:]] == ["GNB", "SVM", "RF", "LR"]
    values = [cell for row in rows[1:] for cell in row[1:]]
    assert len(values) == 16 and all(cell for cell in values)
    for cell in values:
        assert 0.0 <= float(cell) <= 1.0
    budget.check()
