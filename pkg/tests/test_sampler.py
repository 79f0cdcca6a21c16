from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnsieve.issue_store import Label
from vulnsieve.sampler import (
    ExpansionRound,
    SamplingPlan,
    SaturationPolicy,
    compute_sample_size,
    expand_until_saturation,
    inverse_normal_cdf,
    read_saturation_csv,
    stratified_quotas,
    stratified_sample,
    write_saturation_csv,
)
from vulnsieve.synth import synthetic_corpus

# Frozen reference quantiles (scipy.stats.norm.ppf).
REFERENCE_QUANTILES = {
    0.5: 0.0,
    0.975: 1.959963984540054,
    0.995: 2.5758293035489004,
    0.95: 1.6448536269514722,
    0.9: 1.2815515655446004,
    0.01: -2.3263478740408408,
    1e-6: -4.753424308822899,
}


class TestInverseNormal:
    def test_matches_reference_quantiles(self) -> None:
        for p, expected in REFERENCE_QUANTILES.items():
            assert inverse_normal_cdf(p) == pytest.approx(expected, abs=1e-8)

    def test_rejects_boundary(self) -> None:
        with pytest.raises(ValueError):
            inverse_normal_cdf(0.0)

    @given(st.floats(1e-9, 1 - 1e-9))
    @settings(max_examples=200, deadline=None)
    def test_round_trips_through_erfc(self, p: float) -> None:
        z = inverse_normal_cdf(p)
        assert 0.5 * math.erfc(-z / math.sqrt(2)) == pytest.approx(p, abs=1e-9)


class TestSampleSize:
    def test_reproduces_370_from_9564(self) -> None:
        assert compute_sample_size(SamplingPlan(9564)) == 370

    def test_population_of_one_is_capped(self) -> None:
        assert compute_sample_size(SamplingPlan(1)) == 1

    def test_n_1000_gives_278(self) -> None:
        # n0 = 1.959963985^2 * 0.25 / 0.0025 = 384.1459; FPC over 1000 -> 277.73
        assert compute_sample_size(SamplingPlan(1000)) == 278

    def test_zero_margin_rejected(self) -> None:
        with pytest.raises(ValueError, match="margin"):
            SamplingPlan(100, margin=0.0)

    @given(
        n1=st.integers(10, 100_000),
        n2=st.integers(10, 100_000),
        cl=st.sampled_from([0.8, 0.9, 0.95, 0.99]),
        margin=st.sampled_from([0.01, 0.03, 0.05, 0.1]),
    )
    @settings(max_examples=150, deadline=None)
    def test_monotone_in_population_confidence_and_margin(self, n1, n2, cl, margin) -> None:
        lo, hi = sorted((n1, n2))
        assert compute_sample_size(SamplingPlan(lo, cl, margin)) <= compute_sample_size(
            SamplingPlan(hi, cl, margin)
        )
        assert compute_sample_size(SamplingPlan(hi, 0.9, margin)) <= compute_sample_size(
            SamplingPlan(hi, 0.99, margin)
        )
        assert compute_sample_size(SamplingPlan(hi, cl, 0.1)) <= compute_sample_size(
            SamplingPlan(hi, cl, 0.01)
        )


class TestStratifiedSample:
    def test_exact_proportionality(self) -> None:
        corpus = synthetic_corpus(100, 10, seed=0)
        sample = stratified_sample(corpus, 50, seed=1)
        assert sum(1 for li in sample if li.label is Label.VULNERABILITY) == 5

    def test_full_size_returns_permutation_free_copy(self) -> None:
        corpus = synthetic_corpus(40, 7, seed=0)
        assert stratified_sample(corpus, len(corpus), seed=5) == list(corpus)

    def test_largest_remainder_on_paper_counts(self) -> None:
        # 63/820 of 82 = 6.3 -> 6 positives via largest remainder
        corpus = synthetic_corpus(820, 63, seed=0)
        sample = stratified_sample(corpus, 82, seed=2)
        assert sum(1 for li in sample if li.label is Label.VULNERABILITY) == 6
        assert len(sample) == 82

    def test_same_seed_same_ids(self) -> None:
        corpus = synthetic_corpus(200, 30, seed=0)
        ids1 = [li.issue.id for li in stratified_sample(corpus, 60, seed=9)]
        ids2 = [li.issue.id for li in stratified_sample(corpus, 60, seed=9)]
        assert ids1 == ids2

    def test_no_duplicates(self) -> None:
        corpus = synthetic_corpus(200, 30, seed=0)
        ids = [li.issue.id for li in stratified_sample(corpus, 150, seed=4)]
        assert len(ids) == len(set(ids))

    def test_oversized_quota_errors(self) -> None:
        with pytest.raises(ValueError):
            stratified_quotas({"a": 3}, 5)

    def test_sample_larger_than_corpus_errors(self) -> None:
        corpus = synthetic_corpus(10, 2, seed=0)
        with pytest.raises(ValueError):
            stratified_sample(corpus, 11, seed=0)

    @given(
        n_pos=st.integers(2, 40),
        n_neg=st.integers(2, 60),
        seed=st.integers(0, 10_000),
        data=st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_class_ratio_within_one_issue(self, n_pos, n_neg, seed, data) -> None:
        corpus = synthetic_corpus(n_pos + n_neg, n_pos, seed=0)
        n = data.draw(st.integers(1, n_pos + n_neg))
        sample = stratified_sample(corpus, n, seed)
        got_pos = sum(1 for li in sample if li.label is Label.VULNERABILITY)
        expected = n * n_pos / (n_pos + n_neg)
        assert abs(got_pos - expected) < 1.0


class TestSaturation:
    def test_stops_after_round_five_on_spec_history(self) -> None:
        corpus = synthetic_corpus(700, 70, seed=0)
        values = iter([0.55, 0.60, 0.62, 0.625, 0.628, 0.99])
        _, history = expand_until_saturation(
            corpus, 300, SaturationPolicy(50, 0.01, 2), lambda c: next(values), seed=0
        )
        assert [round(h.auc, 3) for h in history] == [0.55, 0.60, 0.62, 0.625, 0.628]

    def test_constant_history_stops_after_patience(self) -> None:
        corpus = synthetic_corpus(300, 30, seed=0)
        _, history = expand_until_saturation(
            corpus, 100, SaturationPolicy(50, 0.01, 2), lambda c: 0.6, seed=0
        )
        assert len(history) == 3

    def test_paper_scale_expansion_takes_nine_rounds(self) -> None:
        # Start at 370, add 50 per round, saturate when the corpus hits 820.
        pool = synthetic_corpus(2000, 154, seed=0)

        def eval_fn(corpus) -> float:
            return 0.30 + 0.04 * min(len(corpus), 720) / 50.0

        final, history = expand_until_saturation(
            pool, 370, SaturationPolicy(50, 0.01, 2), eval_fn, seed=0
        )
        assert [h.corpus_size for h in history] == list(range(370, 821, 50))
        assert len(history) - 1 == 9
        assert len(final) == 820

    def test_pool_exhaustion_stops_expansion(self) -> None:
        corpus = synthetic_corpus(120, 12, seed=0)
        values = iter(float(v) / 10 for v in range(1, 10))
        final, history = expand_until_saturation(
            corpus, 100, SaturationPolicy(50, 0.001, 3), lambda c: next(values), seed=0
        )
        assert len(final) == 120
        assert history[-1].corpus_size == 120

    def test_pool_smaller_than_initial_sample_errors(self) -> None:
        corpus = synthetic_corpus(50, 5, seed=0)
        with pytest.raises(ValueError):
            expand_until_saturation(corpus, 51, SaturationPolicy(), lambda c: 0.5, seed=0)

    def test_history_csv_round_trip(self, tmp_path) -> None:
        history = [ExpansionRound(1, 370, 0.55), ExpansionRound(2, 420, 0.61)]
        path = tmp_path / "saturation.csv"
        write_saturation_csv(history, path)
        assert path.read_text().splitlines()[0] == "round,corpus_size,auc"
        assert read_saturation_csv(path) == history
