"""Masked-surrogate corpus generation, reference predictor, and evaluation.

Every occurrence of any surrogate (both labels) becomes one training
example with that occurrence replaced by the literal ``[MASK]`` token.
Issue labels are reconstructed from predicted tokens by majority vote over
the surrogate lists, so a model is scored on label recovery without ever
seeing labels. Issues containing no surrogate are never exposed to the
predictor; they abstain and count as incorrect.
"""

from __future__ import annotations

import csv
import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

import numpy as np

from vulnsieve.evaluation import CVSplit, derive_seed, make_folds
from vulnsieve.issue_store import Label
from vulnsieve.surrogate_miner import SurrogateSet
from vulnsieve.textprep import TokenizedDoc

logger = logging.getLogger(__name__)

MASK_TOKEN = "[MASK]"
DEFAULT_EPOCHS = 2
DEFAULT_BATCH = 5
DEFAULT_WINDOW = 10


@dataclass(frozen=True)
class MaskedExample:
    """One surrogate occurrence hidden behind the mask token."""

    issue_id: str
    context: tuple[str, ...]
    target: str
    position: int
    label: Label | None = None

    def __post_init__(self) -> None:
        if MASK_TOKEN not in self.context:
            raise ValueError("context must contain the mask token")
        if self.context[self.position] != MASK_TOKEN:
            raise ValueError("position must point at the mask token")


@dataclass
class ExposureReport:
    total_issues: int
    exposed_issues: int
    per_issue_counts: dict[str, int]

    @property
    def exposure_fraction(self) -> float:
        return self.exposed_issues / self.total_issues if self.total_issues else 0.0


def generate_masked_corpus(
    docs: Sequence[TokenizedDoc],
    surrogates: SurrogateSet,
    mask_all_occurrences: bool = False,
) -> tuple[list[MaskedExample], ExposureReport]:
    """One example per surrogate occurrence, other occurrences left intact.

    With ``mask_all_occurrences`` every surrogate occurrence in an issue is
    hidden simultaneously in each example's context (one example per target
    occurrence is still emitted, so reconstruction stays per-occurrence).
    """
    union = set(surrogates.union)
    examples: list[MaskedExample] = []
    counts: dict[str, int] = {}
    for doc in docs:
        n_before = len(examples)
        hit_positions = [i for i, t in enumerate(doc.tokens) if t in union]
        hit_set = set(hit_positions)
        for pos in hit_positions:
            if mask_all_occurrences:
                context = [MASK_TOKEN if i in hit_set else t for i, t in enumerate(doc.tokens)]
            else:
                context = list(doc.tokens)
                context[pos] = MASK_TOKEN
            examples.append(
                MaskedExample(
                    issue_id=doc.issue_id,
                    context=tuple(context),
                    target=doc.tokens[pos],
                    position=pos,
                    label=doc.label,
                )
            )
        counts[doc.issue_id] = len(examples) - n_before
    exposed = sum(1 for c in counts.values() if c > 0)
    return examples, ExposureReport(len(docs), exposed, counts)


# ---------------------------------------------------------------------------
# Reference predictor: multinomial logistic regression over context bags
# ---------------------------------------------------------------------------


class MaskedPredictor(Protocol):
    def predict(self, context: Sequence[str]) -> list[str]: ...


def _window_bag(context: Sequence[str], position: int, window: int) -> list[str]:
    lo = max(0, position - window)
    return [t for t in (*context[lo:position], *context[position + 1 : position + 1 + window])]


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def reference_loss_grad(
    params: np.ndarray, X: np.ndarray, targets: np.ndarray, n_vocab: int, n_classes: int
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of the bag-of-context softmax model and its gradient.

    ``params`` is the flattened (vocab x classes) weight matrix with the
    class bias row appended; exposed for finite-difference checking.
    """
    w = params[: n_vocab * n_classes].reshape(n_vocab, n_classes)
    b = params[n_vocab * n_classes :]
    logits = X @ w + b
    probs = _softmax(logits)
    n = X.shape[0]
    loss = float(-np.mean(np.log(probs[np.arange(n), targets] + 1e-300)))
    delta = probs
    delta[np.arange(n), targets] -= 1.0
    grad_w = X.T @ delta / n
    grad_b = delta.mean(axis=0)
    return loss, np.concatenate([grad_w.ravel(), grad_b])


class ReferencePredictor:
    """Bag-of-context multinomial logistic model over the surrogate union."""

    def __init__(
        self,
        candidates: Sequence[str],
        vocab: dict[str, int],
        weights: np.ndarray,
        bias: np.ndarray,
        window: int,
    ) -> None:
        self.candidates = tuple(candidates)
        self.vocab = vocab
        self.weights = weights
        self.bias = bias
        self.window = window

    def _features(self, context: Sequence[str], position: int) -> np.ndarray:
        x = np.zeros(len(self.vocab))
        for token in _window_bag(context, position, self.window):
            idx = self.vocab.get(token)
            if idx is not None:
                x[idx] += 1.0
        return x

    def predict(self, context: Sequence[str]) -> list[str]:
        """Candidates ranked best-first; ties keep candidate-list order."""
        position = list(context).index(MASK_TOKEN)
        scores = self._features(context, position) @ self.weights + self.bias
        order = np.argsort(-scores, kind="stable")
        return [self.candidates[i] for i in order]

    def predict_top1(self, context: Sequence[str]) -> str:
        return self.predict(context)[0]


def fit_reference_predictor(
    examples: Sequence[MaskedExample],
    surrogates: SurrogateSet,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH,
    seed: int = 0,
    learning_rate: float = 1.0,
    window: int = DEFAULT_WINDOW,
) -> ReferencePredictor:
    """Train the reference masked-token predictor by seeded mini-batch descent.

    The model sees a bag of context tokens within ``window`` positions of
    the mask and scores the full surrogate union. Zero epochs leave the
    uniform zero-initialized model in place.
    """
    candidates = surrogates.union
    cand_index = {c: i for i, c in enumerate(candidates)}
    distinct = {ex.target for ex in examples}
    if len(distinct) < 2:
        raise ValueError(f"need at least 2 distinct target tokens, found {len(distinct)}")
    unknown = distinct - set(candidates)
    if unknown:
        raise ValueError(f"targets outside the surrogate union: {sorted(unknown)}")

    vocab: dict[str, int] = {}
    for ex in examples:
        for token in _window_bag(ex.context, ex.position, window):
            if token not in vocab:
                vocab[token] = len(vocab)
    n_vocab, n_classes = len(vocab), len(candidates)
    X = np.zeros((len(examples), n_vocab))
    targets = np.empty(len(examples), dtype=np.int64)
    for row, ex in enumerate(examples):
        for token in _window_bag(ex.context, ex.position, window):
            idx = vocab.get(token)
            if idx is not None:
                X[row, idx] += 1.0
        targets[row] = cand_index[ex.target]

    weights = np.zeros((n_vocab, n_classes))
    bias = np.zeros(n_classes)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), batch_size):
            sel = order[start : start + batch_size]
            probs = _softmax(X[sel] @ weights + bias)
            probs[np.arange(len(sel)), targets[sel]] -= 1.0
            weights -= learning_rate * (X[sel].T @ probs) / len(sel)
            bias -= learning_rate * probs.mean(axis=0)
    return ReferencePredictor(candidates, vocab, weights, bias, window)


# ---------------------------------------------------------------------------
# Label inference and evaluation
# ---------------------------------------------------------------------------


def infer_issue_label(
    predicted_tokens: Sequence[str], surrogates: SurrogateSet
) -> Label | None:
    """Majority vote of per-example predictions; ties and no votes abstain."""
    pos_votes = sum(1 for t in predicted_tokens if t in surrogates.positive)
    neg_votes = sum(1 for t in predicted_tokens if t in surrogates.negative)
    if pos_votes > neg_votes:
        return Label.VULNERABILITY
    if neg_votes > pos_votes:
        return Label.NON_VULNERABILITY
    return None


@dataclass
class MaskedEvalResult:
    mean_accuracy: float
    overall_accuracy: float
    fold_accuracies: list[float]
    exposure_fraction: float
    exposed_accuracy: float | None
    k: int
    n_issues: int
    n_examples: int
    flags: list[str] = field(default_factory=list)
    per_fold: list[dict[str, Any]] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "mean_accuracy": self.mean_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "fold_accuracies": self.fold_accuracies,
            "exposure_fraction": self.exposure_fraction,
            "exposed_accuracy": self.exposed_accuracy,
            "k": self.k,
            "n_issues": self.n_issues,
            "n_examples": self.n_examples,
            "flags": self.flags,
            "per_fold": self.per_fold,
        }


PredictorFactory = Callable[[Sequence[MaskedExample], int], MaskedPredictor]


def _score_issues(
    docs: Sequence[TokenizedDoc],
    surrogates: SurrogateSet,
    split: CVSplit,
    top1_of: dict[tuple[str, int], str],
    examples_by_issue: dict[str, list[MaskedExample]],
    exposure: ExposureReport,
    flags: list[str],
) -> MaskedEvalResult:
    fold_accs: list[float] = []
    per_fold: list[dict[str, Any]] = []
    total_correct = 0
    exposed_correct = 0
    exposed_total = 0
    for fold in range(split.k):
        members = [d for d in docs if split.fold_of[d.issue_id] == fold]
        exposed_members = [d for d in members if examples_by_issue.get(d.issue_id)]
        if not exposed_members:
            flags.append(f"fold {fold}: no exposed issues")
        correct = 0
        for doc in members:
            issue_examples = examples_by_issue.get(doc.issue_id, [])
            predictions = [
                top1_of[(ex.issue_id, ex.position)] for ex in issue_examples
                if (ex.issue_id, ex.position) in top1_of
            ]
            inferred = infer_issue_label(predictions, surrogates)
            is_correct = inferred is not None and inferred is doc.label
            correct += is_correct
            if issue_examples:
                exposed_total += 1
                exposed_correct += is_correct
        total_correct += correct
        acc = correct / len(members) if members else 0.0
        fold_accs.append(acc)
        per_fold.append(
            {"fold": fold, "issues": len(members), "exposed": len(exposed_members), "accuracy": acc}
        )
    overall = total_correct / len(docs) if docs else 0.0
    if overall > exposure.exposure_fraction + 1e-12:
        raise AssertionError("accuracy exceeded exposure fraction; abstain accounting is broken")
    return MaskedEvalResult(
        mean_accuracy=float(np.mean(fold_accs)) if fold_accs else 0.0,
        overall_accuracy=overall,
        fold_accuracies=fold_accs,
        exposure_fraction=exposure.exposure_fraction,
        exposed_accuracy=(exposed_correct / exposed_total) if exposed_total else None,
        k=split.k,
        n_issues=len(docs),
        n_examples=sum(exposure.per_issue_counts.values()),
        flags=flags,
        per_fold=per_fold,
    )


def _issue_split(docs: Sequence[TokenizedDoc], folds: int, seed: int) -> CVSplit:
    y = [1 if d.label is Label.VULNERABILITY else 0 for d in docs]
    return make_folds([d.issue_id for d in docs], y, folds, derive_seed(seed, "mlm-folds"))


def evaluate_masked(
    docs: Sequence[TokenizedDoc],
    surrogates: SurrogateSet,
    predictor_factory: PredictorFactory | None = None,
    folds: int = 10,
    seed: int = 0,
    epochs: int = DEFAULT_EPOCHS,
    batch_size: int = DEFAULT_BATCH,
) -> MaskedEvalResult:
    """Issue-granular cross-validated masked-prediction evaluation.

    All examples of an issue stay in one fold. Per fold, the predictor is
    fitted on the training folds' examples and each test example gets a
    top-1 token; issue labels come from majority vote, abstentions count as
    incorrect. Reports mean/per-fold accuracy, exposure, and accuracy
    restricted to exposed issues.
    """
    for doc in docs:
        if doc.label is None:
            raise ValueError(f"issue {doc.issue_id!r} is unlabeled")
    examples, exposure = generate_masked_corpus(docs, surrogates)
    split = _issue_split(docs, folds, seed)
    examples_by_issue: dict[str, list[MaskedExample]] = {}
    for ex in examples:
        examples_by_issue.setdefault(ex.issue_id, []).append(ex)

    if predictor_factory is None:

        def predictor_factory(train: Sequence[MaskedExample], fold_seed: int) -> MaskedPredictor:
            return fit_reference_predictor(
                train, surrogates, epochs=epochs, batch_size=batch_size, seed=fold_seed
            )

    flags: list[str] = []
    top1_of: dict[tuple[str, int], str] = {}
    for fold in range(split.k):
        test_examples = [ex for ex in examples if split.fold_of[ex.issue_id] == fold]
        if not test_examples:
            continue
        train_examples = [ex for ex in examples if split.fold_of[ex.issue_id] != fold]
        try:
            predictor = predictor_factory(train_examples, derive_seed(seed, "mlm-fit", fold))
        except ValueError as exc:
            flags.append(f"fold {fold}: predictor not fitted ({exc}); issues abstain")
            continue
        for ex in test_examples:
            top1_of[(ex.issue_id, ex.position)] = predictor.predict(list(ex.context))[0]

    return _score_issues(docs, surrogates, split, top1_of, examples_by_issue, exposure, flags)


def evaluate_masked_with_predictions(
    docs: Sequence[TokenizedDoc],
    surrogates: SurrogateSet,
    split: CVSplit,
    predictions: dict[tuple[str, int], str],
) -> MaskedEvalResult:
    """Score externally produced per-example predictions (file contract).

    ``predictions`` maps (issue_id, position) to the predicted token, as
    loaded from the external predictions JSONL; every generated example must
    be covered.
    """
    examples, exposure = generate_masked_corpus(docs, surrogates)
    missing = [
        (ex.issue_id, ex.position)
        for ex in examples
        if (ex.issue_id, ex.position) not in predictions
    ]
    if missing:
        shown = ", ".join(f"{i}@{p}" for i, p in missing[:10])
        raise ValueError(f"{len(missing)} examples lack predictions (first: {shown})")
    outside = sorted({t for t in predictions.values() if t not in set(surrogates.union)})
    if outside:
        raise ValueError(f"predicted tokens outside the surrogate union: {outside}")
    examples_by_issue: dict[str, list[MaskedExample]] = {}
    for ex in examples:
        examples_by_issue.setdefault(ex.issue_id, []).append(ex)
    return _score_issues(docs, surrogates, split, predictions, examples_by_issue, exposure, [])


# ---------------------------------------------------------------------------
# File formats shared with the external fine-tuning scripts
# ---------------------------------------------------------------------------


def save_masked_corpus(examples: Sequence[MaskedExample], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "issue_id": ex.issue_id,
                        "label": ex.label.value if ex.label else None,
                        "context": list(ex.context),
                        "target": ex.target,
                        "position": ex.position,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_masked_corpus(path: Path | str) -> list[MaskedExample]:
    out: list[MaskedExample] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad JSON: {exc}") from exc
            out.append(
                MaskedExample(
                    issue_id=str(rec["issue_id"]),
                    context=tuple(rec["context"]),
                    target=str(rec["target"]),
                    position=int(rec["position"]),
                    label=Label(rec["label"]) if rec.get("label") else None,
                )
            )
    return out


def save_split(split: CVSplit, path: Path | str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["issue_id", "fold"])
        for issue_id in sorted(split.fold_of):
            writer.writerow([issue_id, split.fold_of[issue_id]])


def load_split(path: Path | str) -> CVSplit:
    fold_of: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            fold_of[rec["issue_id"]] = int(rec["fold"])
    if not fold_of:
        raise ValueError(f"{path}: empty split file")
    return CVSplit(fold_of=fold_of, k=max(fold_of.values()) + 1)


def load_predictions(paths: Sequence[Path | str]) -> dict[tuple[str, int], str]:
    """Merge one or more external predictions files; conflicts are errors."""
    merged: dict[tuple[str, int], str] = {}
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                key = (str(rec["issue_id"]), int(rec["position"]))
                token = str(rec["predicted_token"])
                if key in merged and merged[key] != token:
                    raise ValueError(
                        f"{path}:{line_no}: conflicting prediction for {key[0]}@{key[1]}"
                    )
                merged[key] = token
    return merged
