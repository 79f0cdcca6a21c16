from __future__ import annotations

import random

import pytest

from vulnsieve.issue_store import Label
from vulnsieve.surrogate_miner import SurrogateSet, save_surrogates
from vulnsieve.textprep import TokenizedDoc, save_docs

from mlm_tools.tiny_encoder import build_tiny_encoder

SURROGATES = SurrogateSet(
    tuple(f"p{i}" for i in range(10)),
    tuple(f"n{i}" for i in range(10)),
)


def co_occurrence_docs(n_issues: int, seed: int) -> list[TokenizedDoc]:
    """Each surrogate occurrence is announced by its own cue token."""
    rng = random.Random(seed)
    docs = []
    for i in range(n_issues):
        positive = i % 2 == 0
        pool = SURROGATES.positive if positive else SURROGATES.negative
        tokens: list[str] = ["filler"]
        for s in rng.sample(pool, 3):
            tokens += [f"cue-{s}", s]
        docs.append(
            TokenizedDoc(
                f"i{i}",
                tuple(tokens),
                Label.VULNERABILITY if positive else Label.NON_VULNERABILITY,
            )
        )
    return docs


@pytest.fixture(scope="session")
def corpus_files(tmp_path_factory):
    """Docs JSONL, surrogates JSON, and a pretrained tiny encoder directory."""
    root = tmp_path_factory.mktemp("mlm-fixtures")
    docs = co_occurrence_docs(200, seed=0)
    docs_path = root / "docs.jsonl"
    save_docs(docs, docs_path)
    surrogates_path = root / "surrogates.json"
    save_surrogates(SURROGATES, surrogates_path)
    encoder_dir = build_tiny_encoder(
        docs_path,
        root / "encoder",
        extra_tokens=list(SURROGATES.union),
        pretrain_steps=600,
        seed=7,
    )
    return {
        "docs": docs,
        "docs_path": docs_path,
        "surrogates_path": surrogates_path,
        "encoder": encoder_dir,
    }
