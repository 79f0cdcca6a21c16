"""Fine-tune a pretrained masked-LM to recover hidden surrogate tokens.

Per fold of the pipeline's split file, a fresh copy of the encoder is
fine-tuned on the training folds' masked examples (default epochs=2, batch
size=5) and the held-out fold's examples get top-1 predictions, decoded
over the surrogate-token logits only. Output: one predictions JSONL per
fold in the pipeline's external-predictions format.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from mlm_tools.common import (
    InputError,
    MaskedExample,
    candidate_token_ids,
    encode_pretokenized,
    load_encoder,
    pad_batch,
    pick_device,
    read_masked_corpus,
    read_split,
    read_surrogate_union,
)


def _train_one_fold(
    model,
    tokenizer,
    train: list[MaskedExample],
    epochs: int,
    batch_size: int,
    lr: float,
    max_length: int,
    seed: int,
    device: torch.device,
) -> None:
    if epochs <= 0 or not train:
        return
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    generator = torch.Generator().manual_seed(seed)
    model.train()
    for _ in range(epochs):
        order = torch.randperm(len(train), generator=generator).tolist()
        for start in range(0, len(order), batch_size):
            batch = [train[k] for k in order[start : start + batch_size]]
            encoded = [encode_pretokenized(tokenizer, ex.context, max_length) for ex in batch]
            input_ids, attention = pad_batch(tokenizer, [ids for ids, _ in encoded])
            labels = torch.full_like(input_ids, -100)
            for row, ((_, mask_index), ex) in enumerate(zip(encoded, batch)):
                if mask_index is None:
                    continue  # mask truncated away; nothing to learn from
                target_ids = tokenizer.encode(ex.target, add_special_tokens=False)
                labels[row, mask_index] = target_ids[0]
            out = model(
                input_ids=input_ids.to(device),
                attention_mask=attention.to(device),
                labels=labels.to(device),
            )
            out.loss.backward()
            optimizer.step()
            optimizer.zero_grad()
    model.eval()


def _predict_fold(
    model,
    tokenizer,
    test: list[MaskedExample],
    candidates: list[str],
    cand_ids: list[int],
    max_length: int,
    batch_size: int,
    device: torch.device,
) -> list[dict]:
    records = []
    with torch.no_grad():
        for start in range(0, len(test), batch_size):
            batch = test[start : start + batch_size]
            encoded = [encode_pretokenized(tokenizer, ex.context, max_length) for ex in batch]
            input_ids, attention = pad_batch(tokenizer, [ids for ids, _ in encoded])
            logits = model(
                input_ids=input_ids.to(device), attention_mask=attention.to(device)
            ).logits
            for row, ((_, mask_index), ex) in enumerate(zip(encoded, batch)):
                position_logits = logits[row, mask_index if mask_index is not None else 0]
                best = int(torch.argmax(position_logits[cand_ids]))
                records.append(
                    {
                        "issue_id": ex.issue_id,
                        "position": ex.position,
                        "predicted_token": candidates[best],
                    }
                )
    return records


def finetune_mlm(
    masked_corpus_path: Path | str,
    split_path: Path | str,
    surrogates_path: Path | str,
    model_id: str,
    out_dir: Path | str,
    epochs: int = 2,
    batch_size: int = 5,
    lr: float = 1e-3,
    max_length: int = 128,
    seed: int = 0,
    device: str = "auto",
) -> list[Path]:
    """Run the per-fold fine-tune/predict loop; returns the written files."""
    examples = read_masked_corpus(masked_corpus_path)
    fold_of = read_split(split_path)
    candidates = read_surrogate_union(surrogates_path)
    unknown_issue = sorted({ex.issue_id for ex in examples} - fold_of.keys())
    if unknown_issue:
        raise InputError(f"issues missing from split file: {', '.join(unknown_issue[:10])}")
    outside = sorted({ex.target for ex in examples} - set(candidates))
    if outside:
        raise InputError(f"targets outside the surrogate union: {', '.join(outside)}")

    dev = pick_device(device)
    tokenizer, base_model = load_encoder(model_id, for_mlm=True)
    cand_ids = candidate_token_ids(tokenizer, candidates)
    base_state = {k: v.clone() for k, v in base_model.state_dict().items()}
    base_model.to(dev)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    folds = sorted(set(fold_of.values()))
    for fold in folds:
        test = [ex for ex in examples if fold_of[ex.issue_id] == fold]
        path = out / f"predictions-fold{fold}.jsonl"
        if not test:
            path.write_text("")
            written.append(path)
            continue
        train = [ex for ex in examples if fold_of[ex.issue_id] != fold]
        torch.manual_seed(seed + fold)
        base_model.load_state_dict(base_state)
        _train_one_fold(
            base_model, tokenizer, train, epochs, batch_size, lr, max_length, seed + fold, dev
        )
        records = _predict_fold(
            base_model, tokenizer, test, candidates, cand_ids, max_length, 32, dev
        )
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec) + "\n")
        written.append(path)
        print(f"fold {fold}: trained on {len(train)} examples, predicted {len(test)}")
    return written


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--masked-corpus", required=True, help="masked examples JSONL")
    parser.add_argument("--split", required=True, help="fold split CSV from the pipeline")
    parser.add_argument("--surrogates", required=True, help="surrogates JSON (both lists)")
    parser.add_argument("--model", default="bert-base-uncased")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("--epochs", type=int, default=2)
    parser.add_argument("--batch-size", type=int, default=5)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--max-length", type=int, default=128)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--device", default="auto")
    args = parser.parse_args(argv)
    try:
        written = finetune_mlm(
            args.masked_corpus,
            args.split,
            args.surrogates,
            args.model,
            args.out_dir,
            epochs=args.epochs,
            batch_size=args.batch_size,
            lr=args.lr,
            max_length=args.max_length,
            seed=args.seed,
            device=args.device,
        )
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(written)} prediction files to {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
