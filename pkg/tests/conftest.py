"""Shared fixtures and the acceptance report hook.

Acceptance tests record one line per criterion through the
``criterion_report`` fixture; ``pytest_terminal_summary`` prints the
collected lines at the end of every run so the pass/fail status of each
criterion is visible even when stdout capture is on.
"""

import numpy as np
import pytest

_CRITERION_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def criterion_report():
    """Return a recorder: record(name, passed, detail) -> bool."""

    def record(name, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        suffix = f" ({detail})" if detail else ""
        _CRITERION_LINES.append(f"[{status}] {name}{suffix}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)
