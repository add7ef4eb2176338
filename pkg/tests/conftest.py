"""Shared fixtures and the acceptance-criteria summary.

Tests in test_acceptance.py named test_criterion_* get one PASS/FAIL
line each in the terminal summary, so the acceptance gate is readable
at a glance even inside a long pytest run.  Tests may attach a short
detail string (measured values) via the criterion_note fixture.
"""

import re

import pytest

_CRITERION_RESULTS: dict = {}
_CRITERION_NOTES: dict = {}
_CRITERION_PATTERN = re.compile(r"test_acceptance\.py::test_(criterion_\d+[a-z0-9_]*)")


def _criterion_index(name: str) -> int:
    m = re.match(r"criterion_(\d+)", name)
    return int(m.group(1)) if m else 0


@pytest.fixture
def criterion_note(request):
    """Record a measured-values string shown next to the PASS/FAIL line."""
    m = _CRITERION_PATTERN.search(request.node.nodeid)
    name = m.group(1) if m else request.node.name

    def note(text: str) -> None:
        _CRITERION_NOTES[name] = text

    return note


def pytest_runtest_logreport(report):
    m = _CRITERION_PATTERN.search(report.nodeid)
    if not m:
        return
    name = m.group(1)
    if report.when == "call":
        _CRITERION_RESULTS[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and report.failed:
        _CRITERION_RESULTS[name] = "ERROR"
    elif report.when == "setup" and report.skipped:
        _CRITERION_RESULTS[name] = "SKIP"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERION_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_CRITERION_RESULTS, key=_criterion_index):
        outcome = _CRITERION_RESULTS[name]
        pretty = name.replace("_", " ")
        note = _CRITERION_NOTES.get(name)
        suffix = f"  [{note}]" if note else ""
        terminalreporter.write_line(f"{pretty}: {outcome}{suffix}")
