"""Mine, filter, persist, and load issue reports with their labels.

The on-disk corpus format is JSON Lines: a single header object followed by
one object per issue with keys ``id, repo, title, body, tags, created_at,
is_pull_request, resolved, label`` (label nullable). Mining talks to a
GitHub-compatible REST endpoint and caches raw pages before filtering so
that runs can be replayed offline.
"""

from __future__ import annotations

import json
import logging
import re
import time
from collections.abc import Callable, Iterable, Iterator, Sequence
from dataclasses import dataclass
from datetime import date, datetime
from enum import Enum
from pathlib import Path

import requests

logger = logging.getLogger(__name__)

CORPUS_SCHEMA = "issue-corpus"
CORPUS_VERSION = 1

_REQUIRED_KEYS = (
    "id",
    "repo",
    "title",
    "body",
    "tags",
    "created_at",
    "is_pull_request",
    "resolved",
    "label",
)


class Label(Enum):
    """Binary issue label."""

    VULNERABILITY = "vulnerability_indicating"
    NON_VULNERABILITY = "non_vulnerability_indicating"


class LabelSource(Enum):
    MANUAL = "manual"
    TAG_DERIVED = "tag_derived"


@dataclass(frozen=True)
class Issue:
    """One tracker report."""

    id: str
    repo: str
    title: str
    body: str
    tags: frozenset[str]
    created_at: date
    is_pull_request: bool
    resolved: bool


@dataclass(frozen=True)
class LabeledIssue:
    """An issue plus an optional binary vulnerability label."""

    issue: Issue
    label: Label | None = None
    label_source: LabelSource | None = None


@dataclass(frozen=True)
class IssueFilters:
    """Conjunction of predicates applied while mining.

    ``created_from``/``created_to`` bound the submission date (inclusive on
    both ends). ``tags_any`` keeps issues carrying at least one of the named
    tags (case-insensitive).
    """

    created_from: date | None = None
    created_to: date | None = None
    tags_any: frozenset[str] | None = None
    exclude_pull_requests: bool = True
    require_nonempty_text: bool = True

    def matches(self, issue: Issue) -> bool:
        if self.exclude_pull_requests and issue.is_pull_request:
            return False
        if self.require_nonempty_text and (not issue.title.strip() or not issue.body.strip()):
            return False
        if self.created_from is not None and issue.created_at < self.created_from:
            return False
        if self.created_to is not None and issue.created_at > self.created_to:
            return False
        if self.tags_any is not None:
            wanted = {t.lower() for t in self.tags_any}
            if not wanted & {t.lower() for t in issue.tags}:
                return False
        return True


class CorpusFormatError(ValueError):
    """A corpus file does not match the JSONL schema."""

    def __init__(self, path: Path | str, line_no: int, message: str) -> None:
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class PartialFetchError(RuntimeError):
    """Mining aborted mid-way; carries the issues fetched so far."""

    def __init__(self, message: str, partial: Sequence[Issue]) -> None:
        super().__init__(message)
        self.partial = list(partial)


def derive_tag_label(issue: Issue) -> Label | None:
    """Label from tags: ``security`` wins, else ``bug`` means non-vulnerability.

    Matching is a case-insensitive exact-name match on each tag. Issues with
    neither tag get no label.
    """
    tags = {t.lower() for t in issue.tags}
    if "security" in tags:
        return Label.VULNERABILITY
    if "bug" in tags:
        return Label.NON_VULNERABILITY
    return None


def apply_tag_labels(issues: Iterable[Issue]) -> list[LabeledIssue]:
    """Attach tag-derived labels where the tag rules produce one."""
    out = []
    for issue in issues:
        label = derive_tag_label(issue)
        source = LabelSource.TAG_DERIVED if label is not None else None
        out.append(LabeledIssue(issue, label, source))
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _issue_to_record(li: LabeledIssue) -> dict:
    rec = {
        "id": li.issue.id,
        "repo": li.issue.repo,
        "title": li.issue.title,
        "body": li.issue.body,
        "tags": sorted(li.issue.tags),
        "created_at": li.issue.created_at.isoformat(),
        "is_pull_request": li.issue.is_pull_request,
        "resolved": li.issue.resolved,
        "label": li.label.value if li.label is not None else None,
    }
    if li.label_source is not None:
        rec["label_source"] = li.label_source.value
    return rec


def _record_to_issue(rec: dict, path: Path | str, line_no: int) -> LabeledIssue:
    for key in _REQUIRED_KEYS:
        if key not in rec:
            raise CorpusFormatError(path, line_no, f"record missing {key!r} field")
    try:
        created = date.fromisoformat(rec["created_at"])
    except (TypeError, ValueError) as exc:
        raise CorpusFormatError(path, line_no, f"bad created_at: {exc}") from exc
    if not isinstance(rec["tags"], list):
        raise CorpusFormatError(path, line_no, "tags must be a list")
    label_raw = rec["label"]
    label: Label | None = None
    if label_raw is not None:
        try:
            label = Label(label_raw)
        except ValueError as exc:
            raise CorpusFormatError(path, line_no, f"unknown label {label_raw!r}") from exc
    source_raw = rec.get("label_source")
    if source_raw is not None:
        source = LabelSource(source_raw)
    else:
        source = LabelSource.MANUAL if label is not None else None
    issue = Issue(
        id=str(rec["id"]),
        repo=str(rec["repo"]),
        title=str(rec["title"]),
        body=str(rec["body"]),
        tags=frozenset(str(t) for t in rec["tags"]),
        created_at=created,
        is_pull_request=bool(rec["is_pull_request"]),
        resolved=bool(rec["resolved"]),
    )
    return LabeledIssue(issue, label, source)


def save_corpus(issues: Sequence[LabeledIssue], path: Path | str) -> None:
    """Write a corpus as header + one JSON object per issue, UTF-8.

    Input order is preserved so identical corpora serialize byte-identically.
    Duplicate issue ids are rejected.
    """
    seen: set[str] = set()
    lines = [json.dumps({"schema": CORPUS_SCHEMA, "version": CORPUS_VERSION}, sort_keys=True)]
    for li in issues:
        if li.issue.id in seen:
            raise ValueError(f"duplicate issue id {li.issue.id!r}")
        seen.add(li.issue.id)
        lines.append(json.dumps(_issue_to_record(li), sort_keys=True, ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path: Path | str) -> list[LabeledIssue]:
    """Load a corpus written by :func:`save_corpus`.

    Malformed records raise :class:`CorpusFormatError` naming the line.
    """
    text = Path(path).read_text(encoding="utf-8")
    # Split on newlines only: U+2028-style separators may appear raw inside
    # JSON strings and must not break records.
    lines = text.split("\n")
    if not lines or not lines[0].strip():
        raise CorpusFormatError(path, 1, "missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(path, 1, f"bad header: {exc}") from exc
    if not isinstance(header, dict) or header.get("schema") != CORPUS_SCHEMA:
        raise CorpusFormatError(path, 1, f"not an {CORPUS_SCHEMA} file")
    out: list[LabeledIssue] = []
    seen: set[str] = set()
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(path, line_no, f"bad JSON: {exc}") from exc
        li = _record_to_issue(rec, path, line_no)
        if li.issue.id in seen:
            raise CorpusFormatError(path, line_no, f"duplicate issue id {li.issue.id!r}")
        seen.add(li.issue.id)
        out.append(li)
    return out


# ---------------------------------------------------------------------------
# Mining
# ---------------------------------------------------------------------------

_PER_PAGE = 100


def _parse_issue_payload(payload: dict, repo: str) -> Issue:
    created = datetime.fromisoformat(payload["created_at"].replace("Z", "+00:00"))
    return Issue(
        id=f"{repo}#{payload['number']}",
        repo=repo,
        title=payload.get("title") or "",
        body=payload.get("body") or "",
        tags=frozenset(lbl["name"] for lbl in payload.get("labels", [])),
        created_at=created.date(),
        is_pull_request="pull_request" in payload,
        resolved=payload.get("state") == "closed",
    )


def _cache_file(cache_dir: Path, repo: str, page: int) -> Path:
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", repo)
    return cache_dir / safe / f"page-{page:04d}.json"


def fetch_issues(
    repo: str,
    filters: IssueFilters,
    token: str | None = None,
    *,
    api_base: str = "https://api.github.com",
    cache_dir: Path | str | None = None,
    http_get: Callable[..., requests.Response] | None = None,
    sleep: Callable[[float], None] = time.sleep,
    max_retries: int = 3,
    backoff: float = 1.0,
) -> Iterator[Issue]:
    """Yield every resolved issue of ``repo`` satisfying all filters.

    Pagination is handled transparently; raw pages are written to
    ``cache_dir`` before filtering, and replayed from there on re-runs.
    Yield order is deterministic by ``(created_at, id)``. Transport failures
    are retried with exponential backoff; if retries are exhausted a
    :class:`PartialFetchError` carrying the issues collected so far is
    raised. HTTP 429 and rate-limit 403 responses are waited out per the
    server hint.
    """
    get = http_get or requests.get
    cache = Path(cache_dir) if cache_dir is not None else None
    pages: list[list[dict]] = []
    page_no = 1
    while True:
        payload = _load_page(
            repo,
            page_no,
            get=get,
            token=token,
            api_base=api_base,
            cache=cache,
            sleep=sleep,
            max_retries=max_retries,
            backoff=backoff,
            partial_pages=pages,
        )
        if not payload:
            break
        pages.append(payload)
        if len(payload) < _PER_PAGE:
            break
        page_no += 1

    issues = [_parse_issue_payload(p, repo) for page in pages for p in page]
    issues.sort(key=lambda i: (i.created_at.isoformat(), i.id))
    for issue in issues:
        if issue.resolved and filters.matches(issue):
            yield issue


def _load_page(
    repo: str,
    page_no: int,
    *,
    get: Callable[..., requests.Response],
    token: str | None,
    api_base: str,
    cache: Path | None,
    sleep: Callable[[float], None],
    max_retries: int,
    backoff: float,
    partial_pages: list[list[dict]],
) -> list[dict]:
    if cache is not None:
        cached = _cache_file(cache, repo, page_no)
        if cached.exists():
            return json.loads(cached.read_text(encoding="utf-8"))

    url = f"{api_base}/repos/{repo}/issues"
    params = {"state": "closed", "per_page": _PER_PAGE, "page": page_no}
    headers = {"Accept": "application/vnd.github+json"}
    if token:
        headers["Authorization"] = f"Bearer {token}"

    last_error: Exception | None = None
    for attempt in range(max_retries + 1):
        try:
            resp = get(url, params=params, headers=headers, timeout=30)
        except requests.RequestException as exc:
            last_error = exc
            if attempt < max_retries:
                sleep(backoff * 2**attempt)
            continue
        if resp.status_code == 429 or (
            resp.status_code == 403 and resp.headers.get("X-RateLimit-Remaining") == "0"
        ):
            sleep(_rate_limit_delay(resp.headers))
            continue
        if resp.status_code >= 400:
            last_error = requests.HTTPError(f"HTTP {resp.status_code} for {url}")
            if attempt < max_retries:
                sleep(backoff * 2**attempt)
            continue
        payload = resp.json()
        if cache is not None:
            cached = _cache_file(cache, repo, page_no)
            cached.parent.mkdir(parents=True, exist_ok=True)
            cached.write_text(json.dumps(payload), encoding="utf-8")
        return payload

    partial = [_parse_issue_payload(p, repo) for page in partial_pages for p in page]
    raise PartialFetchError(
        f"fetching {repo} page {page_no} failed after {max_retries + 1} attempts: {last_error}",
        partial,
    )


def _rate_limit_delay(headers: dict | object) -> float:
    retry_after = headers.get("Retry-After")  # type: ignore[union-attr]
    if retry_after:
        try:
            return max(0.0, float(retry_after))
        except ValueError:
            pass
    reset = headers.get("X-RateLimit-Reset")  # type: ignore[union-attr]
    if reset:
        try:
            return max(0.0, float(reset) - time.time())
        except ValueError:
            pass
    return 60.0
