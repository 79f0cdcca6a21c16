from __future__ import annotations

import pytest

from vulnsieve.textprep import PrepResources


@pytest.fixture(scope="session")
def prep_resources() -> PrepResources:
    return PrepResources.load()


def pytest_terminal_summary(terminalreporter, exitstatus, config) -> None:
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            if "test_acceptance" not in getattr(report, "nodeid", ""):
                continue
            name = report.nodeid.split("::")[-1]
            verdict = "PASS" if status == "passed" else "FAIL"
            lines.append((name, verdict))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name, verdict in sorted(lines):
            terminalreporter.write_line(f"[{verdict}] {name}")
