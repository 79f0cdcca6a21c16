"""Pre-processing chain for issue text.

Order of operations is part of the contract: lowercase, log-line
replacement, memory-trace removal, special-character stripping, whitespace
tokenization, stop-word removal, lemma lookup. A delimiter-preserving
variant (:func:`preprocess_light`) keeps stop words in place for keyword
extraction, which needs them as phrase boundaries.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

from vulnsieve.issue_store import Label, LabeledIssue


@dataclass(frozen=True)
class TokenizedDoc:
    """Lowercase word tokens for one issue, label carried through."""

    issue_id: str
    tokens: tuple[str, ...]
    label: Label | None = None


class PrepConfigError(ValueError):
    """A preprocessing resource file is missing or inconsistent."""


def _bundled(name: str) -> Path:
    return Path(str(importlib_resources.files("vulnsieve") / "resources" / name))


@dataclass(frozen=True)
class PrepResources:
    """Loaded stop list and lemma table.

    The lemma table must be closed (no lemma is itself an inflected key) and
    no lemma may be a stop word; both would break pipeline idempotence.
    """

    stopwords: frozenset[str]
    lemmas: dict[str, str] = field(hash=False)

    @classmethod
    def load(
        cls, stopwords_path: Path | str | None = None, lemmas_path: Path | str | None = None
    ) -> "PrepResources":
        stop_file = Path(stopwords_path) if stopwords_path else _bundled("stopwords.txt")
        lemma_file = Path(lemmas_path) if lemmas_path else _bundled("lemmas.tsv")
        if not stop_file.exists():
            raise PrepConfigError(f"stop-word list not found: {stop_file}")
        if not lemma_file.exists():
            raise PrepConfigError(f"lemma table not found: {lemma_file}")
        stops = frozenset(
            w.strip().lower() for w in stop_file.read_text(encoding="utf-8").splitlines() if w.strip()
        )
        lemmas: dict[str, str] = {}
        for line_no, line in enumerate(lemma_file.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise PrepConfigError(f"{lemma_file}:{line_no}: expected 'inflected<TAB>lemma'")
            inflected, lemma = parts[0].strip().lower(), parts[1].strip().lower()
            lemmas[inflected] = lemma
        for inflected, lemma in lemmas.items():
            if lemma in lemmas and lemmas[lemma] != lemma:
                raise PrepConfigError(f"lemma table not closed: {inflected} -> {lemma} -> {lemmas[lemma]}")
            if lemma in stops:
                raise PrepConfigError(f"lemma {lemma!r} (from {inflected!r}) is a stop word")
        return cls(stopwords=stops, lemmas=lemmas)


_SEVERITIES = ("trace", "debug", "info", "warn", "error", "fatal")
_SEV_ALT = "|".join(_SEVERITIES)

# Timestamp leads require a time-of-day component; a bare date is prose.
_TIMESTAMP_RE = re.compile(r"^\s*\d{4}-\d{2}-\d{2}([t ]\d{2}:\d{2}(:\d{2})?(\.\d+)?z?)")
# Severity leads require a separator (bracketed token, colon, or spaced
# dash) so prose starting with a word like "error" is not swallowed and the
# cleaned token stream can never re-match.
_SEVERITY_LEAD_RE = re.compile(
    rf"^\s*(?:\[({_SEV_ALT})\]|({_SEV_ALT}):|({_SEV_ALT})\s+-\s)"
)
_SEVERITY_WORD_RE = re.compile(rf"\b({_SEV_ALT})\b")
_STACK_FRAME_RE = re.compile(r"^\s*at\s+([\w$.]+)\s*\(([\w$.]+):\d+\)")

_HEX_LITERAL_RE = re.compile(r"0x[0-9a-f]{4,}\b")
_BARE_ADDRESS_RE = re.compile(r"\b[0-9a-f]{8,}\b")
_REGISTER_DUMP_RE = re.compile(
    r"\b(r\d{1,2}|x\d{1,2}|[re]?(ax|bx|cx|dx|si|di|bp|sp|ip))\s*=\s*(0x)?[0-9a-f]+\b"
)

_NON_TOKEN_RE = re.compile(r"[^a-z0-9_\-\s]")
_SPACES_RE = re.compile(r"\s+")


def _clean_words(text: str) -> str:
    return _SPACES_RE.sub(" ", _NON_TOKEN_RE.sub(" ", text)).strip()


def replace_log_lines(raw: str) -> str:
    """Rewrite detected execution-log lines as plain sentences.

    A line counts as a log when it leads with an ISO timestamp, leads with a
    severity token followed by a separator, or matches the stack-frame shape
    ``at pkg.Class.method(File:line)``. The rewrite is
    ``execution log reporting <severity-or-'event'> <residual words>``;
    everything else passes through unchanged.
    """
    out_lines = []
    for line in raw.splitlines():
        lowered = line.lower()
        frame = _STACK_FRAME_RE.match(lowered)
        if frame is not None:
            qualified = frame.group(1).split(".")
            residual = _clean_words(" ".join(qualified[-2:]))
            out_lines.append(f"execution log reporting event {residual}".rstrip())
            continue
        ts = _TIMESTAMP_RE.match(lowered)
        sev_lead = _SEVERITY_LEAD_RE.match(lowered)
        if ts is not None:
            rest = lowered[ts.end():]
            severity_match = _SEVERITY_WORD_RE.search(rest)
            if severity_match is not None:
                severity = severity_match.group(1)
                rest = rest[:severity_match.start()] + rest[severity_match.end():]
            else:
                severity = "event"
            out_lines.append(
                f"execution log reporting {severity} {_clean_words(rest)}".rstrip()
            )
            continue
        if sev_lead is not None:
            severity = next(g for g in sev_lead.groups() if g is not None)
            residual = _clean_words(lowered[sev_lead.end():])
            out_lines.append(f"execution log reporting {severity} {residual}".rstrip())
            continue
        out_lines.append(line)
    return "\n".join(out_lines)


def strip_memory_traces(text: str) -> str:
    """Drop hex literals, bare addresses (8+ hex digits), and register dumps."""
    text = _REGISTER_DUMP_RE.sub(" ", text)
    text = _HEX_LITERAL_RE.sub(" ", text)
    return _BARE_ADDRESS_RE.sub(" ", text)


def _tokenize(text: str) -> list[str]:
    # A token must carry content: bare hyphen/underscore runs are dropped.
    return [t for t in text.split() if any(c.isalnum() for c in t)]


def preprocess(raw: str, res: PrepResources) -> list[str]:
    """Run the full chain on raw text, returning the cleaned token list."""
    text = raw.lower()
    text = replace_log_lines(text)
    text = strip_memory_traces(text)
    text = _NON_TOKEN_RE.sub(" ", text)
    tokens = [t for t in _tokenize(text) if t not in res.stopwords]
    return [res.lemmas.get(t, t) for t in tokens]


def preprocess_light(raw: str, res: PrepResources) -> list[str]:
    """Same chain, but stop words are kept as phrase delimiters."""
    text = raw.lower()
    text = replace_log_lines(text)
    text = strip_memory_traces(text)
    text = _NON_TOKEN_RE.sub(" ", text)
    return [res.lemmas.get(t, t) for t in _tokenize(text)]


def issue_text(li: LabeledIssue) -> str:
    """Classified text is title plus body; comment threads are not used."""
    return f"{li.issue.title}\n{li.issue.body}"


def preprocess_issue(li: LabeledIssue, res: PrepResources) -> TokenizedDoc:
    return TokenizedDoc(
        issue_id=li.issue.id,
        tokens=tuple(preprocess(issue_text(li), res)),
        label=li.label,
    )


def preprocess_corpus(corpus: list[LabeledIssue], res: PrepResources) -> list[TokenizedDoc]:
    return [preprocess_issue(li, res) for li in corpus]


def save_docs(docs: list[TokenizedDoc], path: Path | str) -> None:
    """Tokenized docs as JSON Lines ``{"issue_id", "tokens", "label"}``."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(
                json.dumps(
                    {
                        "issue_id": doc.issue_id,
                        "tokens": list(doc.tokens),
                        "label": doc.label.value if doc.label else None,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_docs(path: Path | str) -> list[TokenizedDoc]:
    out: list[TokenizedDoc] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad JSON: {exc}") from exc
            out.append(
                TokenizedDoc(
                    issue_id=str(rec["issue_id"]),
                    tokens=tuple(rec["tokens"]),
                    label=Label(rec["label"]) if rec.get("label") else None,
                )
            )
    return out
