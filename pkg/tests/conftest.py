"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

# criterion -> (ok, summary line); filled in by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=_order):
        ok, line = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {line}")


def _order(key):
    return (0, 0) if not key[1:].isdigit() else (1, int(key[1:]))


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE
