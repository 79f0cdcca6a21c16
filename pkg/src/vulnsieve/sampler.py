"""Sample sizing, stratified sampling, and saturation-driven corpus expansion."""

from __future__ import annotations

import csv
import math
import random
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

from vulnsieve.issue_store import LabeledIssue


@dataclass(frozen=True)
class SamplingPlan:
    """Finite-population sample sizing parameters.

    ``proportion_estimate`` defaults to 0.5, the maximum-variance assumption.
    """

    population_size: int
    confidence_level: float = 0.95
    margin: float = 0.05
    proportion_estimate: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not 0.0 < self.confidence_level < 1.0:
            raise ValueError("confidence_level must be in (0, 1)")
        if not 0.0 < self.margin < 1.0:
            raise ValueError("margin must be in (0, 1); zero margin is undefined")
        if not 0.0 <= self.proportion_estimate <= 1.0:
            raise ValueError("proportion_estimate must be in [0, 1]")


@dataclass(frozen=True)
class SaturationPolicy:
    """Stopping rule for incremental corpus expansion."""

    round_size: int = 50
    epsilon: float = 0.01
    patience: int = 2

    def __post_init__(self) -> None:
        if self.round_size < 1:
            raise ValueError("round_size must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass(frozen=True)
class ExpansionRound:
    round_index: int
    corpus_size: int
    auc: float


# Acklam's rational approximation of the inverse standard normal CDF.
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def inverse_normal_cdf(p: float) -> float:
    """Quantile of the standard normal distribution, |error| < 1e-12.

    Rational approximation refined with one Halley step against ``erfc``;
    no dependency beyond the math module.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must be in (0, 1)")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    elif p <= 1.0 - _P_LOW:
        q = p - 0.5
        r = q * q
        x = (
            (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5])
            * q
            / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]) / (
            (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        )
    # One Halley refinement step.
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


def compute_sample_size(plan: SamplingPlan) -> int:
    """Cochran sample size with finite-population correction.

    n0 = z^2 p (1-p) / e^2 with z the two-sided normal quantile for the
    confidence level, then n = ceil(n0 / (1 + (n0 - 1) / N)), capped by the
    population. (N=9564, CL=0.95, e=0.05) yields 370.
    """
    z = inverse_normal_cdf(0.5 + plan.confidence_level / 2.0)
    p = plan.proportion_estimate
    n0 = z * z * p * (1.0 - p) / (plan.margin * plan.margin)
    n = math.ceil(n0 / (1.0 + (n0 - 1.0) / plan.population_size))
    return max(1, min(plan.population_size, n))


def _label_key(li: LabeledIssue) -> str:
    return li.label.value if li.label is not None else ""


def stratified_quotas(counts: dict[str, int], n: int) -> dict[str, int]:
    """Largest-remainder apportionment of ``n`` over strata.

    Ties on the remainder break by stratum name for determinism.
    """
    total = sum(counts.values())
    if n > total:
        raise ValueError(f"sample size {n} exceeds population {total}")
    exact = {k: n * c / total for k, c in counts.items()}
    quotas = {k: math.floor(v) for k, v in exact.items()}
    leftover = n - sum(quotas.values())
    by_remainder = sorted(counts, key=lambda k: (-(exact[k] - quotas[k]), k))
    for k in by_remainder[:leftover]:
        quotas[k] += 1
    return quotas


def stratified_sample(
    corpus: Sequence[LabeledIssue], n: int, seed: int
) -> list[LabeledIssue]:
    """Draw ``n`` issues with per-class counts proportional to prevalence.

    Largest-remainder rounding sets the per-class quotas; selection within a
    class is seeded and without replacement. The result preserves corpus
    order, so ``n == len(corpus)`` returns a permutation-free copy.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n > len(corpus):
        raise ValueError(f"sample size {n} exceeds corpus size {len(corpus)}")
    strata: dict[str, list[int]] = {}
    for idx, li in enumerate(corpus):
        strata.setdefault(_label_key(li), []).append(idx)
    quotas = stratified_quotas({k: len(v) for k, v in strata.items()}, n)
    rng = random.Random(seed)
    chosen: list[int] = []
    for key in sorted(strata):
        quota = quotas.get(key, 0)
        members = strata[key]
        if quota > len(members):
            raise ValueError(f"stratum {key!r} has {len(members)} issues, quota {quota}")
        chosen.extend(rng.sample(members, quota))
    chosen.sort()
    return [corpus[i] for i in chosen]


def expand_until_saturation(
    corpus_pool: Sequence[LabeledIssue],
    initial_n: int,
    policy: SaturationPolicy,
    eval_fn: Callable[[list[LabeledIssue]], float],
    seed: int = 0,
) -> tuple[list[LabeledIssue], list[ExpansionRound]]:
    """Grow a stratified corpus until the evaluation metric stops moving.

    Starts from a stratified sample of ``initial_n`` issues, then adds
    ``policy.round_size`` stratified issues from the remaining pool per
    round, evaluating after each round. Stops once the absolute AUC delta
    stays below ``policy.epsilon`` for ``policy.patience`` consecutive
    rounds, or when the pool is exhausted. Returns the final corpus and the
    full round history.
    """
    if initial_n > len(corpus_pool):
        raise ValueError(
            f"initial sample of {initial_n} exceeds pool of {len(corpus_pool)} issues"
        )
    corpus = stratified_sample(corpus_pool, initial_n, seed)
    selected = {li.issue.id for li in corpus}
    history = [ExpansionRound(1, len(corpus), eval_fn(list(corpus)))]
    streak = 0
    round_index = 1
    while streak < policy.patience:
        remaining = [li for li in corpus_pool if li.issue.id not in selected]
        if not remaining:
            break
        take = min(policy.round_size, len(remaining))
        round_index += 1
        added = stratified_sample(remaining, take, seed + round_index)
        corpus = list(corpus) + added
        selected.update(li.issue.id for li in added)
        auc = eval_fn(list(corpus))
        history.append(ExpansionRound(round_index, len(corpus), auc))
        if abs(auc - history[-2].auc) < policy.epsilon:
            streak += 1
        else:
            streak = 0
    return list(corpus), history


def write_saturation_csv(history: Sequence[ExpansionRound], path: Path | str) -> None:
    """Emit the saturation history as ``round,corpus_size,auc``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "corpus_size", "auc"])
        for rec in history:
            writer.writerow([rec.round_index, rec.corpus_size, f"{rec.auc:.6f}"])


def read_saturation_csv(path: Path | str) -> list[ExpansionRound]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            ExpansionRound(int(r["round"]), int(r["corpus_size"]), float(r["auc"]))
            for r in reader
        ]
