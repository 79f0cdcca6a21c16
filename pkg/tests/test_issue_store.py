from __future__ import annotations

import json
from datetime import date

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vulnsieve.issue_store import (
    CorpusFormatError,
    Issue,
    IssueFilters,
    Label,
    LabeledIssue,
    LabelSource,
    PartialFetchError,
    apply_tag_labels,
    derive_tag_label,
    fetch_issues,
    load_corpus,
    save_corpus,
)


def make_issue(**overrides) -> Issue:
    base = dict(
        id="eclipse/kura#1",
        repo="eclipse/kura",
        title="TLS check skipped",
        body="The broker accepts self-signed certificates.",
        tags=frozenset({"bug"}),
        created_at=date(2023, 5, 1),
        is_pull_request=False,
        resolved=True,
    )
    base.update(overrides)
    return Issue(**base)


class TestTagLabels:
    def test_security_tag_wins_even_with_bug(self) -> None:
        issue = make_issue(tags=frozenset({"security", "bug"}))
        assert derive_tag_label(issue) is Label.VULNERABILITY

    def test_bug_without_security_is_negative(self) -> None:
        assert derive_tag_label(make_issue(tags=frozenset({"bug"}))) is Label.NON_VULNERABILITY

    def test_unrelated_tags_give_no_label(self) -> None:
        assert derive_tag_label(make_issue(tags=frozenset({"enhancement"}))) is None

    def test_matching_is_case_insensitive(self) -> None:
        assert derive_tag_label(make_issue(tags=frozenset({"Security"}))) is Label.VULNERABILITY

    def test_apply_tag_labels_sets_source(self) -> None:
        labeled = apply_tag_labels([make_issue()])
        assert labeled[0].label_source is LabelSource.TAG_DERIVED


class TestFilters:
    def test_pull_request_excluded(self) -> None:
        assert not IssueFilters().matches(make_issue(is_pull_request=True))

    def test_empty_body_excluded(self) -> None:
        assert not IssueFilters().matches(make_issue(body=""))

    def test_date_window_excludes_earlier_issue(self) -> None:
        filters = IssueFilters(created_from=date(2022, 1, 1), created_to=date(2024, 3, 1))
        assert not filters.matches(make_issue(created_at=date(2021, 12, 31)))
        assert filters.matches(make_issue(created_at=date(2022, 1, 1)))
        assert filters.matches(make_issue(created_at=date(2024, 3, 1)))

    def test_tags_any_matches_case_insensitively(self) -> None:
        filters = IssueFilters(tags_any=frozenset({"security"}))
        assert filters.matches(make_issue(tags=frozenset({"Security", "ui"})))
        assert not filters.matches(make_issue(tags=frozenset({"ui"})))

    @given(
        created=st.dates(date(2021, 1, 1), date(2025, 1, 1)),
        is_pr=st.booleans(),
        body=st.sampled_from(["", "text"]),
        tags=st.frozensets(st.sampled_from(["bug", "security", "ui"]), max_size=3),
        window_lo=st.dates(date(2021, 1, 1), date(2025, 1, 1)),
        window_hi=st.dates(date(2021, 1, 1), date(2025, 1, 1)),
        want_tags=st.none() | st.frozensets(st.sampled_from(["bug", "security"]), min_size=1),
    )
    @settings(max_examples=200, deadline=None)
    def test_filter_matches_brute_force_conjunction(
        self, created, is_pr, body, tags, window_lo, window_hi, want_tags
    ) -> None:
        issue = make_issue(created_at=created, is_pull_request=is_pr, body=body, tags=tags)
        filters = IssueFilters(created_from=window_lo, created_to=window_hi, tags_any=want_tags)
        expected = (
            not is_pr
            and bool(issue.title.strip())
            and bool(body.strip())
            and window_lo <= created <= window_hi
            and (want_tags is None or bool({t.lower() for t in want_tags} & {t.lower() for t in tags}))
        )
        assert filters.matches(issue) == expected


printable_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), min_codepoint=9),
    max_size=80,
)


class TestPersistence:
    def test_empty_corpus_round_trip(self, tmp_path) -> None:
        path = tmp_path / "corpus.jsonl"
        save_corpus([], path)
        assert path.read_text().count("\n") == 1  # header only
        assert load_corpus(path) == []

    def test_two_issue_round_trip_is_field_identical(self, tmp_path) -> None:
        path = tmp_path / "corpus.jsonl"
        issues = [
            LabeledIssue(make_issue(), Label.VULNERABILITY, LabelSource.MANUAL),
            LabeledIssue(make_issue(id="eclipse/kura#2", title="other"), None, None),
        ]
        save_corpus(issues, path)
        assert load_corpus(path) == issues

    def test_missing_label_field_errors_at_line(self, tmp_path) -> None:
        path = tmp_path / "corpus.jsonl"
        save_corpus([LabeledIssue(make_issue())], path)
        lines = path.read_text().splitlines()
        rec = json.loads(lines[1])
        del rec["label"]
        path.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(CorpusFormatError, match="2") as err:
            load_corpus(path)
        assert err.value.line_no == 2

    def test_duplicate_id_rejected(self, tmp_path) -> None:
        with pytest.raises(ValueError, match="duplicate"):
            save_corpus([LabeledIssue(make_issue()), LabeledIssue(make_issue())], tmp_path / "c.jsonl")

    def test_save_is_byte_stable(self, tmp_path) -> None:
        issues = [LabeledIssue(make_issue(), Label.VULNERABILITY, LabelSource.MANUAL)]
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_corpus(issues, a)
        save_corpus(issues, b)
        assert a.read_bytes() == b.read_bytes()

    @given(title=printable_text, body=printable_text)
    @settings(max_examples=60, deadline=None)
    def test_round_trip_lossless_for_printable_text(self, tmp_path_factory, title, body) -> None:
        path = tmp_path_factory.mktemp("rt") / "corpus.jsonl"
        issues = [LabeledIssue(make_issue(title=title + "x", body=body + "\n\"quoted\""))]
        save_corpus(issues, path)
        assert load_corpus(path) == issues


def _page(payloads: list[dict]) -> str:
    return json.dumps(payloads)


class FakeResponse:
    def __init__(self, status_code: int, body, headers=None) -> None:
        self.status_code = status_code
        self._body = body
        self.headers = headers or {}

    def json(self):
        return self._body


def _payload(number: int, created="2023-05-01T10:00:00Z", pr=False, title="t", body="b", labels=()):
    rec = {
        "number": number,
        "title": title,
        "body": body,
        "created_at": created,
        "state": "closed",
        "labels": [{"name": n} for n in labels],
    }
    if pr:
        rec["pull_request"] = {"url": "x"}
    return rec


class TestFetch:
    def test_paginates_filters_and_sorts(self) -> None:
        pages = {
            1: [_payload(i, created=f"2023-05-{(i % 27) + 1:02d}T10:00:00Z") for i in range(1, 101)],
            2: [_payload(200, pr=True), _payload(201, body=""), _payload(202)],
        }

        def fake_get(url, params=None, headers=None, timeout=None):
            return FakeResponse(200, pages[params["page"]])

        got = list(fetch_issues("o/r", IssueFilters(), http_get=fake_get, sleep=lambda s: None))
        assert len(got) == 101  # PR and empty-body excluded
        keys = [(i.created_at, i.id) for i in got]
        assert keys == sorted(keys)

    def test_rate_limit_waits_per_server_hint(self) -> None:
        calls = {"n": 0}
        sleeps: list[float] = []

        def fake_get(url, params=None, headers=None, timeout=None):
            calls["n"] += 1
            if calls["n"] == 1:
                return FakeResponse(429, {}, headers={"Retry-After": "7"})
            return FakeResponse(200, [_payload(1)])

        got = list(fetch_issues("o/r", IssueFilters(), http_get=fake_get, sleep=sleeps.append))
        assert len(got) == 1
        assert 7.0 in sleeps

    def test_exhausted_retries_raise_partial_marker(self) -> None:
        import requests as _requests

        pages_served = {"n": 0}

        def fake_get(url, params=None, headers=None, timeout=None):
            if params["page"] == 1:
                pages_served["n"] += 1
                return FakeResponse(200, [_payload(i) for i in range(1, 101)])
            raise _requests.ConnectionError("boom")

        with pytest.raises(PartialFetchError) as err:
            list(fetch_issues("o/r", IssueFilters(), http_get=fake_get, sleep=lambda s: None))
        assert len(err.value.partial) == 100

    def test_cache_replay_skips_network(self, tmp_path) -> None:
        calls = {"n": 0}

        def fake_get(url, params=None, headers=None, timeout=None):
            calls["n"] += 1
            return FakeResponse(200, [_payload(1)] if params["page"] == 1 else [])

        kwargs = dict(cache_dir=tmp_path, http_get=fake_get, sleep=lambda s: None)
        first = list(fetch_issues("o/r", IssueFilters(), **kwargs))
        after_first = calls["n"]
        second = list(fetch_issues("o/r", IssueFilters(), **kwargs))
        assert first == second
        assert calls["n"] == after_first  # replayed from cache
