"""Shared I/O and encoding helpers for the bridge scripts.

The file formats here mirror the main pipeline's external interfaces:
tokenized docs ``{"issue_id", "tokens", "label"}``, masked examples
``{"issue_id", "label", "context", "target", "position"}``, fold split CSV
``issue_id,fold``, and surrogates JSON with ``positive_surrogates`` /
``negative_surrogates`` lists.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import torch

MASK_TOKEN = "[MASK]"


class InputError(ValueError):
    """Bad or inconsistent input files; maps to exit code 1."""


@dataclass(frozen=True)
class Doc:
    issue_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class MaskedExample:
    issue_id: str
    context: tuple[str, ...]
    target: str
    position: int


def read_docs(path: Path | str) -> list[Doc]:
    docs: list[Doc] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(Doc(str(rec["issue_id"]), tuple(rec["tokens"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{line_no}: not a tokenized-docs record ({exc})") from exc
    if not docs:
        raise InputError(f"{path}: no documents")
    return docs


def read_masked_corpus(path: Path | str) -> list[MaskedExample]:
    examples: list[MaskedExample] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                ex = MaskedExample(
                    str(rec["issue_id"]),
                    tuple(rec["context"]),
                    str(rec["target"]),
                    int(rec["position"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise InputError(f"{path}:{line_no}: not a masked-example record ({exc})") from exc
            if ex.context[ex.position] != MASK_TOKEN:
                raise InputError(f"{path}:{line_no}: position does not point at {MASK_TOKEN}")
            examples.append(ex)
    if not examples:
        raise InputError(f"{path}: no masked examples")
    return examples


def read_split(path: Path | str) -> dict[str, int]:
    fold_of: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            fold_of[rec["issue_id"]] = int(rec["fold"])
    if not fold_of:
        raise InputError(f"{path}: empty split file")
    return fold_of


def read_surrogate_union(path: Path | str) -> list[str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        union = list(doc["positive_surrogates"]) + list(doc["negative_surrogates"])
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a surrogates file ({exc})") from exc
    if len(set(union)) != len(union):
        raise InputError(f"{path}: surrogate lists overlap")
    return union


def load_encoder(model_id: str, for_mlm: bool):
    """Tokenizer and model from a hub id or local directory.

    Load failures exit with a message rather than a traceback: the encoder
    is an input, not a bug.
    """
    from transformers import AutoModel, AutoModelForMaskedLM, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        cls = AutoModelForMaskedLM if for_mlm else AutoModel
        model = cls.from_pretrained(model_id)
    except Exception as exc:  # transformers raises a zoo of types here
        print(f"error: cannot load encoder {model_id!r}: {exc}", file=sys.stderr)
        raise SystemExit(1) from exc
    model.eval()
    return tokenizer, model


def pick_device(requested: str = "auto") -> torch.device:
    if requested != "auto":
        return torch.device(requested)
    if torch.cuda.is_available():
        return torch.device("cuda")
    print("warning: no accelerator found, proceeding on CPU", file=sys.stderr)
    return torch.device("cpu")


def encode_pretokenized(
    tokenizer, tokens: tuple[str, ...], max_length: int
) -> tuple[list[int], int | None]:
    """Word tokens to input ids with specials; returns the mask index if any.

    Each word may expand to several word pieces; the literal mask token maps
    to the tokenizer's mask id, so the position survives retokenization.
    """
    ids: list[int] = [tokenizer.cls_token_id]
    mask_index: int | None = None
    for token in tokens:
        if token == MASK_TOKEN:
            if mask_index is None:
                mask_index = len(ids)
            ids.append(tokenizer.mask_token_id)
            continue
        piece_ids = tokenizer.encode(token, add_special_tokens=False)
        if not piece_ids:
            piece_ids = [tokenizer.unk_token_id]
        ids.extend(piece_ids)
    ids = ids[: max_length - 1]
    ids.append(tokenizer.sep_token_id)
    if mask_index is not None and mask_index >= len(ids) - 1:
        mask_index = None  # mask fell past the truncation point
    return ids, mask_index


def candidate_token_ids(tokenizer, candidates: list[str]) -> list[int]:
    """First word-piece id per candidate; decode scores only these."""
    ids: list[int] = []
    for cand in candidates:
        piece_ids = tokenizer.encode(cand, add_special_tokens=False)
        if not piece_ids:
            raise InputError(f"surrogate {cand!r} tokenizes to nothing")
        ids.append(piece_ids[0])
    if len(set(ids)) != len(ids):
        print(
            "warning: surrogate candidates collide on their first word piece; "
            "decode may conflate them",
            file=sys.stderr,
        )
    return ids


def pad_batch(tokenizer, id_lists: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    max_len = max(len(ids) for ids in id_lists)
    input_ids = torch.full((len(id_lists), max_len), tokenizer.pad_token_id, dtype=torch.long)
    attention = torch.zeros((len(id_lists), max_len), dtype=torch.long)
    for row, ids in enumerate(id_lists):
        input_ids[row, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        attention[row, : len(ids)] = 1
    return input_ids, attention
