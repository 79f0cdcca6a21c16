"""Seeded synthetic corpora and stub embedding files for tests and demos.

The demo corpus mirrors the real mining target's shape: 820 issues with 63
vulnerability-indicating, titles and bodies drawn from overlapping security
and maintenance word pools so the signal is learnable but not trivial.
Everything here is deterministic given the seed.
"""

from __future__ import annotations

import hashlib
import json
import random
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from vulnsieve.featurizer import EmbeddingTable
from vulnsieve.issue_store import Issue, Label, LabeledIssue, LabelSource
from vulnsieve.textprep import TokenizedDoc

SECURITY_WORDS = (
    "vulnerability", "cve", "exploit", "overflow", "injection", "attacker",
    "tls", "certificate", "bypass", "privilege", "heap", "buffer", "leak",
    "auth", "credential", "spoof", "insecure", "cipher", "handshake", "patch",
)
MAINTENANCE_WORDS = (
    "button", "layout", "typo", "widget", "render", "latency", "flaky",
    "timeout", "readme", "style", "refactor", "lint", "translation", "panel",
    "tooltip", "scroll", "theme", "font", "spacing", "dashboard",
)
SHARED_WORDS = (
    "device", "sensor", "gateway", "firmware", "update", "driver", "network",
    "service", "server", "client", "message", "protocol", "node", "board",
    "module", "version", "broker", "topic", "payload", "connection",
)


CONNECTIVES = ("the", "is", "of", "on", "and", "when", "to", "a", "in", "after")


def _draw_words(rng: random.Random, n: int, weights: tuple[float, float, float]) -> list[str]:
    """Content words interleaved with stop words, like real issue prose."""
    pools = (SECURITY_WORDS, MAINTENANCE_WORDS, SHARED_WORDS)
    out: list[str] = []
    for _ in range(n):
        out.append(rng.choice(pools[rng.choices((0, 1, 2), weights=weights)[0]]))
        if rng.random() < 0.45:
            out.append(rng.choice(CONNECTIVES))
    return out


def synthetic_corpus(n: int = 820, positives: int = 63, seed: int = 0) -> list[LabeledIssue]:
    """Labeled demo corpus with a planted but noisy vocabulary signal."""
    if positives > n:
        raise ValueError("positives cannot exceed corpus size")
    rng = random.Random(seed)
    start = date(2022, 1, 1)
    issues: list[LabeledIssue] = []
    for i in range(n):
        positive = i < positives
        weights = (0.45, 0.1, 0.45) if positive else (0.06, 0.44, 0.5)
        title = " ".join(_draw_words(rng, rng.randint(3, 6), weights))
        body = " ".join(_draw_words(rng, rng.randint(15, 40), weights))
        issue = Issue(
            id=f"synthetic/repo#{i + 1}",
            repo="synthetic/repo",
            title=title,
            body=body,
            tags=frozenset({"security"} if positive else {"bug"}),
            created_at=start + timedelta(days=rng.randint(0, 789)),
            is_pull_request=False,
            resolved=True,
        )
        issues.append(
            LabeledIssue(
                issue,
                Label.VULNERABILITY if positive else Label.NON_VULNERABILITY,
                LabelSource.TAG_DERIVED,
            )
        )
    rng.shuffle(issues)
    return issues


def separable_doc_corpus(
    n: int = 200, vocab_size: int = 20, seed: int = 0, doc_len: int = 30, skew: float = 0.8
) -> list[TokenizedDoc]:
    """Strongly separable tokenized corpus over a small closed vocabulary.

    Positive docs draw mostly from the first half of the vocabulary,
    negative docs from the second half; half of the corpus is positive.
    """
    rng = random.Random(seed)
    vocab = [f"f{i:02d}" for i in range(vocab_size)]
    half = vocab_size // 2
    docs: list[TokenizedDoc] = []
    for i in range(n):
        positive = i < n // 2
        tokens = []
        for _ in range(doc_len):
            own_half = rng.random() < skew
            pool = vocab[:half] if positive == own_half else vocab[half:]
            tokens.append(rng.choice(pool))
        docs.append(
            TokenizedDoc(
                issue_id=f"synthetic-doc-{i}",
                tokens=tuple(tokens),
                label=Label.VULNERABILITY if positive else Label.NON_VULNERABILITY,
            )
        )
    return docs


def shuffle_labels(docs: list[TokenizedDoc], seed: int) -> list[TokenizedDoc]:
    """Same documents, labels randomly permuted (the permutation null)."""
    rng = random.Random(seed)
    labels = [d.label for d in docs]
    rng.shuffle(labels)
    return [TokenizedDoc(d.issue_id, d.tokens, lbl) for d, lbl in zip(docs, labels)]


def write_stub_embedding_table(
    path: Path | str,
    dim: int = 16,
    seed: int = 0,
    tokens: tuple[str, ...] | None = None,
) -> None:
    """GloVe-style text table over the synthetic pools with a class offset.

    Security-pool tokens are shifted positively along the first coordinates
    and maintenance-pool tokens negatively, so mean pooling carries signal.
    """
    if tokens is None:
        tokens = SECURITY_WORDS + MAINTENANCE_WORDS + SHARED_WORDS
    rng = np.random.default_rng(seed)
    lines = []
    for token in tokens:
        vec = rng.normal(0.0, 1.0, size=dim)
        if token in SECURITY_WORDS:
            vec[: dim // 4] += 1.5
        elif token in MAINTENANCE_WORDS:
            vec[: dim // 4] -= 1.5
        lines.append(token + " " + " ".join(f"{v:.6f}" for v in vec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_stub_provider_vectors(
    path: Path | str, docs: list[TokenizedDoc], table: EmbeddingTable, seed: int = 0
) -> None:
    """Sentence-vector stand-in: mean word vector plus deterministic jitter."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            hits = [table.vectors[t] for t in doc.tokens if t in table.vectors]
            base = np.mean(hits, axis=0) if hits else np.zeros(table.dim)
            digest = hashlib.sha256(f"{seed}:{doc.issue_id}".encode()).digest()
            jitter_rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vec = base + jitter_rng.normal(0.0, 0.05, size=table.dim)
            fh.write(
                json.dumps({"id": doc.issue_id, "vector": [round(v, 6) for v in vec]}) + "\n"
            )
