"""Command-line entry point wiring the full pipeline.

Subcommands: ingest, sample, preprocess, embed-check, train, evaluate,
llm-classify, surrogates, mask, mlm-eval, report. A TOML config file can
supply defaults; explicit flags win. Every run threads one master seed and
emits a run manifest so reports are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

import numpy as np

import vulnsieve
from vulnsieve import (
    evaluation,
    featurizer,
    issue_store,
    llm_gate,
    mask_harness,
    sampler,
    surrogate_miner,
    textprep,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_INTERNAL_ERROR = 2

_USER_ERRORS = (
    FileNotFoundError,
    issue_store.CorpusFormatError,
    featurizer.EmbeddingFormatError,
    surrogate_miner.StaleReviewError,
    textprep.PrepConfigError,
    ValueError,
    KeyError,
)


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UserError(f"{message}\n{self.format_usage()}")


def _sha256_file(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(out_dir: Path, args: argparse.Namespace, corpus_path: str | None) -> None:
    resolved = {k: str(v) for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "config_digest": hashlib.sha256(
            json.dumps(resolved, sort_keys=True).encode()
        ).hexdigest(),
        "resolved_config": resolved,
        "corpus_digest": _sha256_file(corpus_path) if corpus_path else None,
        "seed": args.seed,
        "versions": {
            "vulnsieve": vulnsieve.__version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
    }
    (out_dir / "run-manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _prep_resources(args: argparse.Namespace) -> textprep.PrepResources:
    return textprep.PrepResources.load(
        getattr(args, "stopwords", None), getattr(args, "lemmas", None)
    )


def _load_labeled_docs(args: argparse.Namespace) -> list[textprep.TokenizedDoc]:
    if getattr(args, "docs", None):
        return textprep.load_docs(args.docs)
    corpus = issue_store.load_corpus(args.corpus)
    return textprep.preprocess_corpus(corpus, _prep_resources(args))


def _featurizations(args: argparse.Namespace, docs: list[textprep.TokenizedDoc]) -> dict:
    """Instantiate the featurizations requested by --features."""
    wanted = [f.strip() for f in args.features.split(",") if f.strip()]
    out: dict[str, object] = {}
    for name in wanted:
        if name == "bow":
            out[name] = evaluation.BowFeaturization(args.max_vocab, args.tfidf)
        elif name == "glove":
            if not args.glove_table:
                raise UserError("--glove-table is required for the glove featurization")
            table = featurizer.load_embedding_table(args.glove_table)
            out[name] = evaluation.MeanEmbeddingFeaturization(table, "glove")
        elif name == "w2v":
            if not args.w2v_table:
                raise UserError("--w2v-table is required for the w2v featurization")
            table = featurizer.load_embedding_table(args.w2v_table)
            out[name] = evaluation.MeanEmbeddingFeaturization(table, "w2v")
        elif name == "bert":
            if not args.bert_vectors:
                raise UserError("--bert-vectors is required for the bert featurization")
            vectors = featurizer.provider_vectors(
                [d.issue_id for d in docs], args.bert_vectors, name="bert"
            )
            out[name] = evaluation.ProviderFeaturization(vectors, "bert")
        else:
            raise UserError(f"unknown featurization {name!r}")
    return out


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def _cmd_ingest(args: argparse.Namespace) -> int:
    filters = issue_store.IssueFilters(
        created_from=date.fromisoformat(args.created_from) if args.created_from else None,
        created_to=date.fromisoformat(args.created_to) if args.created_to else None,
        tags_any=frozenset(args.tags_any.split(",")) if args.tags_any else None,
    )
    token = os.environ.get(args.token_env) if args.token_env else None
    labeled: list[issue_store.LabeledIssue] = []
    for repo in args.repos.split(","):
        repo = repo.strip()
        issues = list(
            issue_store.fetch_issues(
                repo,
                filters,
                token,
                api_base=args.api_base,
                cache_dir=args.cache_dir,
            )
        )
        labeled.extend(issue_store.apply_tag_labels(issues))
        logger.info("mined %d issues from %s", len(issues), repo)
    issue_store.save_corpus(labeled, args.out)
    print(f"wrote {len(labeled)} issues to {args.out}")
    return EXIT_OK


def _cmd_sample(args: argparse.Namespace) -> int:
    corpus = issue_store.load_corpus(args.corpus)
    if args.n is not None:
        n = args.n
    else:
        plan = sampler.SamplingPlan(
            population_size=len(corpus),
            confidence_level=args.confidence,
            margin=args.margin,
            seed=args.seed,
        )
        n = sampler.compute_sample_size(plan)
        print(f"computed sample size {n} for population {len(corpus)}")
    sample = sampler.stratified_sample(corpus, n, args.seed)
    issue_store.save_corpus(sample, args.out)
    print(f"wrote {len(sample)} issues to {args.out}")
    return EXIT_OK


def _cmd_preprocess(args: argparse.Namespace) -> int:
    corpus = issue_store.load_corpus(args.corpus)
    res = _prep_resources(args)
    if args.light:
        docs = [
            textprep.TokenizedDoc(
                li.issue.id,
                tuple(textprep.preprocess_light(textprep.issue_text(li), res)),
                li.label,
            )
            for li in corpus
        ]
    else:
        docs = textprep.preprocess_corpus(corpus, res)
    textprep.save_docs(docs, args.out)
    print(f"wrote {len(docs)} tokenized docs to {args.out}")
    return EXIT_OK


def _cmd_embed_check(args: argparse.Namespace) -> int:
    if not args.table and not args.vectors:
        raise UserError("embed-check needs --table or --vectors")
    if args.table:
        table = featurizer.load_embedding_table(args.table)
        print(f"{args.table}: {len(table)} tokens, dimension {table.dim}")
    if args.vectors:
        ids: list[str] = []
        with open(args.vectors, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    ids.append(str(json.loads(line)["id"]))
        vectors = featurizer.provider_vectors(ids, args.vectors)
        dim = len(next(iter(vectors.values())).values) if vectors else 0
        print(f"{args.vectors}: {len(vectors)} vectors, dimension {dim}")
    return EXIT_OK


def _cmd_train(args: argparse.Namespace) -> int:
    docs = _load_labeled_docs(args)
    feats = _featurizations(args, docs)
    kinds = [m.strip() for m in args.models.split(",") if m.strip()]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results: list[evaluation.CVResult] = []
    for feat_name, feat in feats.items():
        for kind in kinds:
            result = evaluation.cross_validate(
                docs,
                feat,  # type: ignore[arg-type]
                kind,
                seed=evaluation.derive_seed(args.seed, kind, feat_name),
                k=args.folds,
                n_jobs=args.jobs,
            )
            results.append(result)
            print(
                f"{kind}/{feat_name}: mean AUC {result.mean_auc:.4f} "
                f"over {result.k} folds"
            )
    report = evaluation.build_report(results, metadata={"seed": args.seed})
    evaluation.write_report_json(report, out_dir / "cells.json")
    evaluation.write_matrix_csv(evaluation.cells_from_results(results), out_dir / "matrix.csv")
    _write_manifest(out_dir, args, args.corpus if not args.docs else None)
    print(f"wrote {out_dir / 'matrix.csv'}")
    return EXIT_OK


def _cmd_evaluate(args: argparse.Namespace) -> int:
    pool = issue_store.load_corpus(args.corpus)
    res = _prep_resources(args)
    feat_args = argparse.Namespace(**vars(args))
    policy = sampler.SaturationPolicy(args.round_size, args.epsilon, args.patience)

    def eval_fn(corpus: list[issue_store.LabeledIssue]) -> float:
        docs = textprep.preprocess_corpus(corpus, res)
        feats = _featurizations(feat_args, docs)
        result = evaluation.cross_validate(
            docs,
            feats[args.features.split(",")[0].strip()],  # type: ignore[arg-type]
            args.models.split(",")[0].strip(),
            seed=args.seed,
            k=args.folds,
            n_jobs=args.jobs,
        )
        return result.mean_auc

    final, history = sampler.expand_until_saturation(
        pool, args.initial_n, policy, eval_fn, seed=args.seed
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sampler.write_saturation_csv(history, out_dir / "saturation.csv")
    issue_store.save_corpus(final, out_dir / "corpus-final.jsonl")
    _write_manifest(out_dir, args, args.corpus)
    print(
        f"saturated at {len(final)} issues after {len(history)} rounds; "
        f"history in {out_dir / 'saturation.csv'}"
    )
    return EXIT_OK


def _cmd_llm_classify(args: argparse.Namespace) -> int:
    corpus = issue_store.load_corpus(args.corpus)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = llm_gate.LlmConfig(
        endpoint=args.endpoint,
        model=args.model,
        seed=args.seed,
        temperature=args.temperature,
        api_key_env=args.api_key_env,
        cache_path=args.cache or out_dir / "llm-cache.jsonl",
    )
    client = llm_gate.LlmClient(config, api_key=os.environ.get(args.api_key_env))
    template = Path(args.template).read_text(encoding="utf-8") if args.template else None
    verdicts = client.classify_corpus([li.issue for li in corpus], template, jobs=args.jobs)
    llm_gate.save_verdicts(verdicts, out_dir / "verdicts.jsonl")
    labeled = [li for li in corpus if li.label is not None]
    if labeled:
        metrics = llm_gate.llm_metrics(verdicts, labeled)
        (out_dir / "llm-metrics.json").write_text(
            json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        print(f"pass@3 {metrics['pass_at_3']}, AUC {metrics['auc_binary_majority']}")
    _write_manifest(out_dir, args, args.corpus)
    return EXIT_OK


def _cmd_surrogates(args: argparse.Namespace) -> int:
    corpus = issue_store.load_corpus(args.corpus)
    res = _prep_resources(args)
    review_dir = Path(args.review_dir)
    review_dir.mkdir(parents=True, exist_ok=True)
    rankings = {}
    for side, label in (("pos", issue_store.Label.VULNERABILITY), ("neg", issue_store.Label.NON_VULNERABILITY)):
        docs = [
            textprep.preprocess_light(textprep.issue_text(li), res)
            for li in corpus
            if li.label is label
        ]
        rankings[side] = surrogate_miner.rake_extract(docs, set(res.stopwords))
    if args.stage == "extract":
        for side in ("pos", "neg"):
            surrogate_miner.write_review_file(
                rankings[side], review_dir / f"review-{side}.csv", args.top_k
            )
        print(f"wrote review files to {review_dir}; mark keep/drop and run --stage finalize")
        return EXIT_OK
    approved = {}
    for side in ("pos", "neg"):
        kept = surrogate_miner.review_cycle(
            rankings[side], review_dir / f"review-{side}.csv", args.top_k
        )
        if kept is None:
            raise UserError(f"review file for {side} was only just created; fill verdicts first")
        approved[side] = surrogate_miner.explode_to_tokens(kept)
    surrogates = surrogate_miner.finalize_surrogates(
        approved["pos"], approved["neg"], args.per_label
    )
    surrogate_miner.save_surrogates(surrogates, args.out)
    print(f"wrote surrogates to {args.out}")
    return EXIT_OK


def _cmd_mask(args: argparse.Namespace) -> int:
    docs = _load_labeled_docs(args)
    surrogates = surrogate_miner.load_surrogates(args.surrogates)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    examples, exposure = mask_harness.generate_masked_corpus(
        docs, surrogates, mask_all_occurrences=args.mask_all
    )
    mask_harness.save_masked_corpus(examples, out_dir / "masked.jsonl")
    split = mask_harness._issue_split(docs, args.folds, args.seed)
    mask_harness.save_split(split, out_dir / "split.csv")
    (out_dir / "exposure.json").write_text(
        json.dumps(
            {
                "total_issues": exposure.total_issues,
                "exposed_issues": exposure.exposed_issues,
                "exposure_fraction": exposure.exposure_fraction,
                "examples": len(examples),
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(
        f"wrote {len(examples)} masked examples "
        f"({exposure.exposed_issues}/{exposure.total_issues} issues exposed)"
    )
    return EXIT_OK


def _cmd_mlm_eval(args: argparse.Namespace) -> int:
    docs = _load_labeled_docs(args)
    surrogates = surrogate_miner.load_surrogates(args.surrogates)
    if args.predictions:
        paths = [p.strip() for p in args.predictions.split(",")]
        predictions = mask_harness.load_predictions(paths)
        if not args.split:
            raise UserError("--split is required with --predictions")
        split = mask_harness.load_split(args.split)
        result = mask_harness.evaluate_masked_with_predictions(
            docs, surrogates, split, predictions
        )
    else:
        result = mask_harness.evaluate_masked(
            docs,
            surrogates,
            folds=args.folds,
            seed=args.seed,
            epochs=args.epochs,
            batch_size=args.batch_size,
        )
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(
        json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(
        f"mean accuracy {result.mean_accuracy:.4f}, exposure {result.exposure_fraction:.4f}, "
        f"exposed-only accuracy {result.exposed_accuracy}"
    )
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    cells_doc = json.loads(Path(args.cells).read_text(encoding="utf-8"))
    llm = json.loads(Path(args.llm).read_text(encoding="utf-8")) if args.llm else None
    mlm = json.loads(Path(args.mlm).read_text(encoding="utf-8")) if args.mlm else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = {
        (c["classifier"], c["featurization"]): c["mean_auc"] for c in cells_doc["cells"]
    }
    evaluation.write_matrix_csv(cells, out_dir / "matrix.csv")
    report = dict(cells_doc)
    report["llm"] = llm
    report["mlm"] = mlm
    if args.saturation:
        report["saturation"] = [
            {"round": r.round_index, "corpus_size": r.corpus_size, "auc": r.auc}
            for r in sampler.read_saturation_csv(args.saturation)
        ]
    evaluation.write_report_json(report, out_dir / "report.json")
    _write_manifest(out_dir, args, None)
    print(f"wrote {out_dir / 'report.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_prep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stopwords", help="stop-word list file (default: bundled)")
    p.add_argument("--lemmas", help="lemma table file (default: bundled)")


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--features", default="bow", help="comma list: bow,bert,glove,w2v")
    p.add_argument("--glove-table", help="GloVe-format text table for --features glove")
    p.add_argument("--w2v-table", help="GloVe-format text table for --features w2v")
    p.add_argument("--bert-vectors", help="sentence-vector JSONL for --features bert")
    p.add_argument("--max-vocab", type=int, default=featurizer.DEFAULT_MAX_VOCAB)
    p.add_argument("--tfidf", action="store_true", help="weight BoW counts by idf")


def build_parser() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="vulnsieve", description=__doc__)
    parser.add_argument("--config", help="TOML config file supplying flag defaults")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    parser.add_argument("-v", "--verbose", action="store_true")
    subparsers: dict[str, argparse.ArgumentParser] = {}

    class _Sub:
        def __init__(self, action) -> None:
            self._action = action

        def add_parser(self, name: str, **kwargs):
            p = self._action.add_parser(name, **kwargs)
            subparsers[name] = p
            return p

    sub = _Sub(parser.add_subparsers(dest="command", parser_class=_Parser))

    p = sub.add_parser("ingest", help="mine issues from tracker REST endpoints")
    p.add_argument("--repos", required=True, help="comma list of owner/name repos")
    p.add_argument("--created-from")
    p.add_argument("--created-to")
    p.add_argument("--tags-any")
    p.add_argument("--token-env", default="GITHUB_TOKEN")
    p.add_argument("--api-base", default="https://api.github.com")
    p.add_argument("--cache-dir", help="raw page cache for offline replay")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("sample", help="size and draw a stratified sample")
    p.add_argument("--corpus", required=True)
    p.add_argument("--n", type=int, help="explicit sample size (default: computed)")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--margin", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("preprocess", help="clean and tokenize a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--light", action="store_true", help="keep stop words (for keyword mining)")
    _add_prep_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("embed-check", help="validate embedding files")
    p.add_argument("--table", help="word-embedding text table")
    p.add_argument("--vectors", help="sentence-vector JSONL")
    p.set_defaults(func=_cmd_embed_check)

    p = sub.add_parser("train", help="cross-validate classifier/featurization cells")
    p.add_argument("--corpus")
    p.add_argument("--docs", help="pre-tokenized docs JSONL (skips preprocessing)")
    p.add_argument("--models", default="gnb,svm,rf,lr")
    p.add_argument("--folds", type=int, default=10)
    _add_feature_flags(p)
    _add_prep_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="expand the corpus until AUC saturates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--initial-n", type=int, required=True)
    p.add_argument("--round-size", type=int, default=50)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--patience", type=int, default=2)
    p.add_argument("--models", default="svm")
    p.add_argument("--folds", type=int, default=10)
    _add_feature_flags(p)
    _add_prep_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("llm-classify", help="classify issues through a chat-completion LLM")
    p.add_argument("--corpus", required=True)
    p.add_argument("--endpoint", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--template", help="prompt template with {title} and {body}")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--api-key-env", default="LLM_API_KEY")
    p.add_argument("--cache", help="response cache path (default: <out>/llm-cache.jsonl)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_llm_classify)

    p = sub.add_parser("surrogates", help="mine per-label keywords and finalize surrogates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--stage", choices=("extract", "finalize"), required=True)
    p.add_argument("--review-dir", default="review")
    p.add_argument("--top-k", type=int, default=surrogate_miner.REVIEW_TOP_K)
    p.add_argument("--per-label", type=int, default=surrogate_miner.SURROGATES_PER_LABEL)
    _add_prep_flags(p)
    p.add_argument("--out", default="surrogates.json")
    p.set_defaults(func=_cmd_surrogates)

    p = sub.add_parser("mask", help="generate the masked-surrogate corpus")
    p.add_argument("--corpus")
    p.add_argument("--docs")
    p.add_argument("--surrogates", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--mask-all", action="store_true", help="mask all occurrences at once")
    _add_prep_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mask)

    p = sub.add_parser("mlm-eval", help="evaluate masked-token predictions")
    p.add_argument("--corpus")
    p.add_argument("--docs")
    p.add_argument("--surrogates", required=True)
    p.add_argument("--predictions", help="comma list of external prediction JSONL files")
    p.add_argument("--split", help="fold split CSV (required with --predictions)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--epochs", type=int, default=mask_harness.DEFAULT_EPOCHS)
    p.add_argument("--batch-size", type=int, default=mask_harness.DEFAULT_BATCH)
    _add_prep_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mlm_eval)

    p = sub.add_parser("report", help="assemble the final report files")
    p.add_argument("--cells", required=True, help="cells.json from train")
    p.add_argument("--llm")
    p.add_argument("--mlm")
    p.add_argument("--saturation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser, subparsers


def dispatch(argv: list[str] | None = None) -> int:
    parser, subparsers = build_parser()
    try:
        args, _ = parser.parse_known_args(argv)
        config = _load_config(getattr(args, "config", None))
        if config and args.command:
            # Top-level scalars apply everywhere; a [subcommand] table applies
            # to that subcommand. Explicit flags always win over config.
            flat = {
                k.replace("-", "_"): v for k, v in config.items() if not isinstance(v, dict)
            }
            flat.update(
                {
                    k.replace("-", "_"): v
                    for k, v in config.get(args.command, {}).items()
                }
            )
            parser.set_defaults(**flat)
            subparsers[args.command].set_defaults(**flat)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UserError(parser.format_usage())
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command in ("train", "mask", "mlm-eval") and not (
            getattr(args, "corpus", None) or getattr(args, "docs", None)
        ):
            raise UserError(f"{args.command} needs --corpus or --docs")
        return args.func(args)
    except UserError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USER_ERROR
    except _USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL_ERROR


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
