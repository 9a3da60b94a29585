"""Shared pytest plumbing: collects acceptance-criterion verdict lines.

Each test in test_acceptance.py appends one "A# PASS/FAIL: ..." line via the
``acceptance_log`` fixture; the terminal summary reprints them in one block
so the verdicts are visible even under captured output.
"""

import pytest

_VERDICTS: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _VERDICTS


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
