"""Export pooled sentence embeddings for a preprocessed corpus.

Reads the pipeline's tokenized-docs JSONL and writes one
``{"id": ..., "vector": [...]}`` record per issue in input order. Encoding
runs in deterministic evaluation mode, so identical inputs produce
byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from mlm_tools.common import Doc, InputError, encode_pretokenized, load_encoder, pad_batch, read_docs

DEFAULT_MODEL = "bert-base-uncased"


def pool_hidden(hidden: torch.Tensor, attention: torch.Tensor, mode: str) -> torch.Tensor:
    if mode == "cls":
        return hidden[:, 0]
    mask = attention.unsqueeze(-1).to(hidden.dtype)
    return (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)


def export_embeddings(
    docs: list[Doc],
    model_id: str,
    out_path: Path | str,
    batch_size: int = 16,
    max_length: int = 256,
    pooling: str = "mean",
    seed: int = 0,
) -> int:
    """Write one embedding record per doc; returns the shared dimension."""
    tokenizer, model = load_encoder(model_id, for_mlm=False)
    torch.manual_seed(seed)
    dim = None
    with torch.no_grad(), open(out_path, "w", encoding="utf-8") as fh:
        for start in range(0, len(docs), batch_size):
            batch = docs[start : start + batch_size]
            id_lists = [encode_pretokenized(tokenizer, d.tokens, max_length)[0] for d in batch]
            input_ids, attention = pad_batch(tokenizer, id_lists)
            hidden = model(input_ids=input_ids, attention_mask=attention).last_hidden_state
            pooled = pool_hidden(hidden, attention, pooling)
            for doc, vector in zip(batch, pooled):
                values = [float(v) for v in vector.tolist()]
                dim = len(values) if dim is None else dim
                fh.write(json.dumps({"id": doc.issue_id, "vector": values}) + "\n")
    return int(dim or 0)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", required=True, help="tokenized-docs JSONL (pipeline format)")
    parser.add_argument("--model", default=DEFAULT_MODEL, help="encoder hub id or local path")
    parser.add_argument("--out", required=True)
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--max-length", type=int, default=256)
    parser.add_argument("--pooling", choices=("mean", "cls"), default="mean")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--ids", help="comma list restricting export to these issue ids")
    args = parser.parse_args(argv)

    try:
        docs = read_docs(args.docs)
        if args.ids:
            wanted = [i.strip() for i in args.ids.split(",") if i.strip()]
            have = {d.issue_id for d in docs}
            missing = sorted(set(wanted) - have)
            if missing:
                raise InputError(f"ids not in corpus: {', '.join(missing)}")
            keep = set(wanted)
            docs = [d for d in docs if d.issue_id in keep]
        dim = export_embeddings(
            docs,
            args.model,
            args.out,
            batch_size=args.batch_size,
            max_length=args.max_length,
            pooling=args.pooling,
            seed=args.seed,
        )
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(docs)} vectors of dimension {dim} to {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
