"""Build a small pretrained word-level BERT encoder from a local corpus.

Hub access is not always available (air-gapped CI, this sandbox), so this
tool constructs a self-contained encoder directory: a word-level vocabulary
from the given tokenized docs, a small BERT initialized from a seed, and a
short seeded masked-token pretraining pass over the corpus so downstream
fine-tuning starts from a genuinely pretrained model. The directory loads
with ``from_pretrained`` like any hub checkpoint.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch

from mlm_tools.common import InputError, pad_batch, read_docs

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")


def build_tiny_encoder(
    docs_path: Path | str,
    out_dir: Path | str,
    extra_tokens: list[str] | None = None,
    hidden_size: int = 64,
    num_layers: int = 2,
    num_heads: int = 2,
    pretrain_steps: int = 600,
    pretrain_batch: int = 8,
    learning_rate: float = 1e-3,
    mask_prob: float = 0.15,
    max_position: int = 128,
    seed: int = 0,
) -> Path:
    from transformers import BertConfig, BertForMaskedLM, BertTokenizer

    docs = read_docs(docs_path)
    vocab = list(SPECIAL_TOKENS) + sorted(
        {t for d in docs for t in d.tokens} | set(extra_tokens or [])
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    tokenizer = BertTokenizer(str(out / "vocab.txt"), do_lower_case=False)

    torch.manual_seed(seed)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=hidden_size,
        num_hidden_layers=num_layers,
        num_attention_heads=num_heads,
        intermediate_size=hidden_size * 2,
        max_position_embeddings=max_position,
    )
    model = BertForMaskedLM(config)

    if pretrain_steps > 0:
        _pretrain(
            model, tokenizer, docs, pretrain_steps, pretrain_batch, learning_rate,
            mask_prob, max_position, seed,
        )

    model.eval()
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    return out


def _pretrain(
    model, tokenizer, docs, steps: int, batch_size: int, lr: float,
    mask_prob: float, max_position: int, seed: int,
) -> None:
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr)
    generator = torch.Generator().manual_seed(seed)
    model.train()
    done = 0
    while done < steps:
        order = torch.randperm(len(docs), generator=generator).tolist()
        for start in range(0, len(order), batch_size):
            batch = [docs[k] for k in order[start : start + batch_size]]
            id_lists = []
            for doc in batch:
                ids = [tokenizer.cls_token_id]
                ids += tokenizer.convert_tokens_to_ids(list(doc.tokens))
                ids = ids[: max_position - 1] + [tokenizer.sep_token_id]
                id_lists.append(ids)
            input_ids, attention = pad_batch(tokenizer, id_lists)
            labels = torch.full_like(input_ids, -100)
            for row, ids in enumerate(id_lists):
                for pos in range(1, len(ids) - 1):
                    if torch.rand((), generator=generator).item() < mask_prob:
                        labels[row, pos] = input_ids[row, pos].item()
                        input_ids[row, pos] = tokenizer.mask_token_id
            out = model(input_ids=input_ids, attention_mask=attention, labels=labels)
            out.loss.backward()
            optimizer.step()
            optimizer.zero_grad()
            done += 1
            if done >= steps:
                break


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", required=True, help="tokenized-docs JSONL to pretrain on")
    parser.add_argument("--out", required=True, help="encoder directory to create")
    parser.add_argument("--extra-tokens", help="comma list of tokens to force into the vocab")
    parser.add_argument("--hidden-size", type=int, default=64)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--pretrain-steps", type=int, default=600)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    try:
        out = build_tiny_encoder(
            args.docs,
            args.out,
            extra_tokens=args.extra_tokens.split(",") if args.extra_tokens else None,
            hidden_size=args.hidden_size,
            num_layers=args.layers,
            num_heads=args.heads,
            pretrain_steps=args.pretrain_steps,
            seed=args.seed,
        )
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"encoder written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
