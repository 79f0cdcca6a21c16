"""Chat-completion gate: classify each issue with a fixed seed, three attempts.

Requests are byte-identical across the attempts of an issue (the seed is
constant; only the cache key carries the attempt index). Responses are
cached on disk keyed by (issue digest, prompt digest, seed, attempt), so a
re-run over a cached corpus issues zero network calls.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from importlib import resources as importlib_resources
from pathlib import Path

import requests

from vulnsieve.evaluation import auc, pass_at_k
from vulnsieve.issue_store import Issue, Label, LabeledIssue

logger = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You classify IoT issue reports for exploitable vulnerabilities. "
    "Answer YES or NO first, then give a one-sentence justification."
)
TRUNCATION_MARKER = "…[truncated]"
_YES_NO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


class Parse(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class Attempt:
    raw_response: str
    parsed: Parse


@dataclass(frozen=True)
class LlmVerdict:
    issue_id: str
    attempts: tuple[Attempt, ...]
    seed_used: int


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str
    model: str
    seed: int = 1234
    temperature: float = 1.0
    api_key_env: str = "LLM_API_KEY"
    body_budget: int = 8000
    attempts: int = 3
    max_retries: int = 2
    timeout: float = 60.0
    min_interval: float = 0.0
    cache_path: Path | str | None = None


def default_template() -> str:
    return (importlib_resources.files("vulnsieve") / "resources" / "prompt_template.txt").read_text(
        encoding="utf-8"
    )


def build_prompt(issue: Issue, template: str, body_budget: int = 8000) -> list[dict[str, str]]:
    """System role framing plus the user template with fields substituted.

    The body is truncated to the character budget with a marker. Templates
    must contain both ``{title}`` and ``{body}`` placeholders.
    """
    if "{title}" not in template or "{body}" not in template:
        raise ValueError("template must contain {title} and {body} placeholders")
    if not issue.title.strip() or not issue.body.strip():
        raise ValueError(f"issue {issue.id!r} has empty title or body")
    body = issue.body
    if len(body) > body_budget:
        body = body[:body_budget] + TRUNCATION_MARKER
    user = template.replace("{title}", issue.title).replace("{body}", body)
    return [
        {"role": "system", "content": SYSTEM_PROMPT},
        {"role": "user", "content": user},
    ]


def parse_response(text: str) -> Parse:
    """First standalone YES/NO (case-insensitive) wins; else unparseable."""
    match = _YES_NO_RE.search(text)
    if match is None:
        return Parse.UNPARSEABLE
    return Parse.POSITIVE if match.group(1).lower() == "yes" else Parse.NEGATIVE


class ResponseCache:
    """Append-only JSON Lines cache of raw responses keyed by digest."""

    def __init__(self, path: Path | str | None) -> None:
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._entries: dict[str, str] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries[rec["key"]] = rec["response"]

    def get(self, key: str) -> str | None:
        return self._entries.get(key)

    def put(self, key: str, response: str) -> None:
        with self._lock:
            self._entries[key] = response
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "response": response}) + "\n")


def _digest(*parts: str) -> str:
    return hashlib.sha256("\x1f".join(parts).encode()).hexdigest()


Transport = Callable[[str, dict, dict, float], requests.Response]


def _default_transport(url: str, payload: dict, headers: dict, timeout: float) -> requests.Response:
    return requests.post(url, json=payload, headers=headers, timeout=timeout)


class LlmClient:
    """Issues seeded classification requests with caching and rate limiting."""

    def __init__(
        self,
        config: LlmConfig,
        api_key: str | None = None,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        self.api_key = api_key
        self.transport = transport or _default_transport
        self.sleep = sleep
        self.cache = ResponseCache(config.cache_path)
        self._rate_lock = threading.Lock()
        self._last_request = 0.0

    def request_payload(self, messages: list[dict[str, str]]) -> dict:
        """The wire payload; identical for every attempt of an issue."""
        return {
            "model": self.config.model,
            "messages": messages,
            "seed": self.config.seed,
            "temperature": self.config.temperature,
            "n": 1,
        }

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _throttle(self) -> None:
        if self.config.min_interval <= 0:
            return
        with self._rate_lock:
            wait = self.config.min_interval - (time.monotonic() - self._last_request)
            if wait > 0:
                self.sleep(wait)
            self._last_request = time.monotonic()

    def _request_once(self, payload: dict) -> str | None:
        self._throttle()
        resp = self.transport(self.config.endpoint, payload, self._headers(), self.config.timeout)
        if resp.status_code == 429:
            retry_after = resp.headers.get("Retry-After", "1")
            try:
                self.sleep(max(0.0, float(retry_after)))
            except ValueError:
                self.sleep(1.0)
            return None
        if resp.status_code >= 400:
            logger.warning("LLM endpoint returned HTTP %d", resp.status_code)
            return None
        data = resp.json()
        return data["choices"][0]["message"]["content"]

    def _request_with_retries(self, payload: dict) -> str | None:
        for attempt in range(self.config.max_retries + 1):
            try:
                content = self._request_once(payload)
            except (requests.RequestException, KeyError, ValueError, json.JSONDecodeError) as exc:
                logger.warning("LLM request failed: %s", exc)
                content = None
            if content is not None:
                return content
            if attempt < self.config.max_retries:
                self.sleep(2.0**attempt)
        return None

    def classify_issue(self, issue: Issue, template: str | None = None) -> LlmVerdict:
        """Three seeded attempts; each parses to positive/negative/unparseable."""
        template = template if template is not None else default_template()
        messages = build_prompt(issue, template, self.config.body_budget)
        payload = self.request_payload(messages)
        issue_digest = _digest(issue.id, issue.title, issue.body)
        prompt_digest = _digest(SYSTEM_PROMPT, template, self.config.model)
        attempts: list[Attempt] = []
        for attempt_idx in range(self.config.attempts):
            key = _digest(issue_digest, prompt_digest, str(self.config.seed), str(attempt_idx))
            raw = self.cache.get(key)
            if raw is None:
                raw = self._request_with_retries(payload)
                if raw is not None:
                    self.cache.put(key, raw)
            if raw is None:
                attempts.append(Attempt("", Parse.UNPARSEABLE))
            else:
                attempts.append(Attempt(raw, parse_response(raw)))
        return LlmVerdict(issue.id, tuple(attempts), self.config.seed)

    def classify_corpus(
        self, issues: Sequence[Issue], template: str | None = None, jobs: int = 4
    ) -> list[LlmVerdict]:
        template = template if template is not None else default_template()
        if jobs <= 1:
            return [self.classify_issue(issue, template) for issue in issues]
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda i: self.classify_issue(i, template), issues))


# ---------------------------------------------------------------------------
# Verdict persistence and metrics
# ---------------------------------------------------------------------------


def save_verdicts(verdicts: Sequence[LlmVerdict], path: Path | str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in verdicts:
            fh.write(
                json.dumps(
                    {
                        "issue_id": v.issue_id,
                        "seed": v.seed_used,
                        "attempts": [
                            {"raw": a.raw_response, "parsed": a.parsed.value} for a in v.attempts
                        ],
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def load_verdicts(path: Path | str) -> list[LlmVerdict]:
    out: list[LlmVerdict] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(
                LlmVerdict(
                    issue_id=str(rec["issue_id"]),
                    attempts=tuple(
                        Attempt(a["raw"], Parse(a["parsed"])) for a in rec["attempts"]
                    ),
                    seed_used=int(rec["seed"]),
                )
            )
    return out


def _attempt_correct(attempt: Attempt, label: Label) -> bool:
    if attempt.parsed is Parse.UNPARSEABLE:
        return False
    expected = Parse.POSITIVE if label is Label.VULNERABILITY else Parse.NEGATIVE
    return attempt.parsed is expected


def binary_score(verdict: LlmVerdict) -> int:
    """Majority over parsed attempts; ties and all-unparseable score 0."""
    pos = sum(1 for a in verdict.attempts if a.parsed is Parse.POSITIVE)
    neg = sum(1 for a in verdict.attempts if a.parsed is Parse.NEGATIVE)
    return 1 if pos > neg else 0


def llm_metrics(verdicts: Sequence[LlmVerdict], corpus: Sequence[LabeledIssue]) -> dict:
    """pass@3, pass@1, and AUC over {0,1} majority scores.

    With binary scores the tie convention makes this AUC equal balanced
    accuracy, which the report labels explicitly.
    """
    labels = {li.issue.id: li.label for li in corpus if li.label is not None}
    scored = [v for v in verdicts if v.issue_id in labels]
    if not scored:
        raise ValueError("no labeled issues among the verdicts")
    matrix = [
        [_attempt_correct(a, labels[v.issue_id]) for a in v.attempts] for v in scored
    ]
    k = len(matrix[0])
    y = [1 if labels[v.issue_id] is Label.VULNERABILITY else 0 for v in scored]
    scores = [binary_score(v) for v in scored]
    unparseable = sum(
        1 for v in scored for a in v.attempts if a.parsed is Parse.UNPARSEABLE
    )
    metrics = {
        "n_issues": len(scored),
        "pass_at_3": pass_at_k(matrix, k) if k == 3 else None,
        "pass_at_1": pass_at_k([[row[0]] for row in matrix], 1),
        "unparseable_attempts": unparseable,
        "seed": scored[0].seed_used,
        "auc_note": "AUC over {0,1} majority-vote scores; equals balanced accuracy under the tie convention",
    }
    try:
        metrics["auc_binary_majority"] = auc(scores, y)
    except ValueError:
        metrics["auc_binary_majority"] = None
    return metrics
