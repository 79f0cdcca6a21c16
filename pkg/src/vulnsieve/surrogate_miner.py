"""RAKE keyword mining, manual review workflow, and surrogate finalization.

Candidate phrases are maximal runs of non-stop tokens; each word scores
deg/freq (degree counts co-occurring candidate length per occurrence) and a
phrase scores the sum of its member word scores. The top keywords per label
go through a reviewer file; survivors are exploded to single tokens,
cross-label duplicates discarded, and the top 10 per label kept.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

REVIEW_TOP_K = 100
SURROGATES_PER_LABEL = 10
_VERDICTS = {"keep", "drop", ""}


@dataclass(frozen=True)
class RankedKeyword:
    phrase: tuple[str, ...]
    score: float

    @property
    def text(self) -> str:
        return " ".join(self.phrase)


@dataclass(frozen=True)
class SurrogateSet:
    """Disjoint ranked keyword lists, one per label, lowercase tokens."""

    positive: tuple[str, ...]
    negative: tuple[str, ...]

    def __post_init__(self) -> None:
        if set(self.positive) & set(self.negative):
            raise ValueError("surrogate lists must be disjoint")
        for token in (*self.positive, *self.negative):
            if token != token.lower() or " " in token:
                raise ValueError(f"surrogates must be single lowercase tokens: {token!r}")

    @property
    def union(self) -> tuple[str, ...]:
        return self.positive + self.negative

    def label_of(self, token: str) -> str | None:
        if token in self.positive:
            return "positive"
        if token in self.negative:
            return "negative"
        return None


class StaleReviewError(ValueError):
    """A review file no longer matches the current keyword ranking."""


def candidate_phrases(tokens: Sequence[str], stopwords: set[str]) -> list[tuple[str, ...]]:
    """Maximal runs of consecutive non-stop tokens."""
    phrases: list[tuple[str, ...]] = []
    run: list[str] = []
    for token in tokens:
        if token in stopwords:
            if run:
                phrases.append(tuple(run))
                run = []
        else:
            run.append(token)
    if run:
        phrases.append(tuple(run))
    return phrases


def rake_extract(
    docs: Iterable[Sequence[str]], stopwords: set[str]
) -> list[RankedKeyword]:
    """Rank candidate phrases by summed member-word degree/frequency ratios.

    ``docs`` must keep stop words in place; they delimit the candidates.
    Ties break lexicographically on the phrase text so ranking is
    deterministic regardless of input order.
    """
    if not stopwords:
        raise ValueError("stop list must be non-empty")
    freq: dict[str, int] = defaultdict(int)
    degree: dict[str, int] = defaultdict(int)
    seen_phrases: set[tuple[str, ...]] = set()
    for doc in docs:
        for phrase in candidate_phrases(doc, stopwords):
            seen_phrases.add(phrase)
            for word in phrase:
                freq[word] += 1
                degree[word] += len(phrase)
    word_score = {w: degree[w] / freq[w] for w in freq}
    ranked = [
        RankedKeyword(phrase, float(sum(word_score[w] for w in phrase)))
        for phrase in seen_phrases
    ]
    ranked.sort(key=lambda kw: (-kw.score, kw.text))
    return ranked


def write_review_file(
    ranked: Sequence[RankedKeyword], path: Path | str, k: int = REVIEW_TOP_K
) -> None:
    """Emit the top-k keywords as ``rank,phrase,score,verdict`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "phrase", "score", "verdict"])
        for rank, kw in enumerate(ranked[:k], 1):
            writer.writerow([rank, kw.text, f"{kw.score:.6f}", ""])


def read_review_file(path: Path | str) -> list[tuple[int, str, float, str]]:
    rows: list[tuple[int, str, float, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            verdict = (rec.get("verdict") or "").strip().lower()
            if verdict not in _VERDICTS:
                raise StaleReviewError(
                    f"{path}: unknown verdict {verdict!r} for phrase {rec['phrase']!r}"
                )
            rows.append((int(rec["rank"]), rec["phrase"], float(rec["score"]), verdict))
    return rows


def review_cycle(
    ranked: Sequence[RankedKeyword], review_path: Path | str, k: int = REVIEW_TOP_K
) -> list[RankedKeyword] | None:
    """Two-phase manual review around the top-k keywords.

    First run writes the review file and returns None; the reviewer marks
    each row keep/drop out of band. Subsequent runs read the verdicts and
    return the kept keywords in original rank order (blank verdicts count as
    keep). A file whose phrases no longer match the ranking is stale.
    """
    path = Path(review_path)
    top = list(ranked[:k])
    if not path.exists():
        write_review_file(ranked, path, k)
        return None
    rows = read_review_file(path)
    expected = {kw.text: kw for kw in top}
    if len(rows) != len(top):
        raise StaleReviewError(
            f"{path}: review file has {len(rows)} rows, ranking has {len(top)}"
        )
    kept: list[RankedKeyword] = []
    for rank, phrase, _score, verdict in rows:
        if phrase not in expected:
            raise StaleReviewError(f"{path}: phrase {phrase!r} not in the current ranking")
        if rank < 1 or rank > len(top) or top[rank - 1].text != phrase:
            raise StaleReviewError(f"{path}: rank {rank} does not match phrase {phrase!r}")
        if verdict != "drop":
            kept.append(expected[phrase])
    return kept


def explode_to_tokens(keywords: Sequence[RankedKeyword]) -> list[str]:
    """Split multiword phrases into tokens, dedup keeping the best rank."""
    out: list[str] = []
    seen: set[str] = set()
    for kw in keywords:
        for word in kw.phrase:
            token = word.lower()
            if token not in seen:
                seen.add(token)
                out.append(token)
    return out


def finalize_surrogates(
    pos_approved: Sequence[str], neg_approved: Sequence[str], k: int = SURROGATES_PER_LABEL
) -> SurrogateSet:
    """Discard tokens appearing for both labels, then keep the top-k each."""
    pos = [t.lower() for t in pos_approved]
    neg = [t.lower() for t in neg_approved]
    for token in (*pos, *neg):
        if " " in token:
            raise ValueError(f"expected single tokens, got {token!r}; explode phrases first")
    pos = list(dict.fromkeys(pos))
    neg = list(dict.fromkeys(neg))
    shared = set(pos) & set(neg)
    pos_final = [t for t in pos if t not in shared][:k]
    neg_final = [t for t in neg if t not in shared][:k]
    if not pos_final or not neg_final:
        raise ValueError(
            f"cross-label discard left {len(pos_final)} positive / {len(neg_final)} negative surrogates"
        )
    return SurrogateSet(tuple(pos_final), tuple(neg_final))


def save_surrogates(surrogates: SurrogateSet, path: Path | str) -> None:
    doc = {
        "positive_surrogates": list(surrogates.positive),
        "negative_surrogates": list(surrogates.negative),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def load_surrogates(path: Path | str) -> SurrogateSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SurrogateSet(
        tuple(doc["positive_surrogates"]), tuple(doc["negative_surrogates"])
    )
