"""Acceptance gate: each criterion runs at its stated tolerance.

One PASS/FAIL line per criterion is printed immediately and again in the
terminal summary.
"""

import pytest

from mmcf import verify
from mmcf.diagnostics import FAIL

KEYS = ["closures"] + list(verify.CRITERIA)


def _run(key):
    return verify.oracle_closures() if key == "closures" else verify.CRITERIA[key]()


def _describe(results):
    parts = []
    for r in results:
        val = "-" if r.measured is None else f"{r.measured:.3g}"
        bound = "" if r.bound is None else f"/{r.bound:.3g}"
        parts.append(f"{r.check}[{r.status}] {val}{bound}")
    return "; ".join(parts)


@pytest.mark.parametrize("key", KEYS)
def test_criterion(key, acceptance_log, capsys):
    results = _run(key)
    assert results, f"{key} produced no checks"
    failed = [r for r in results if r.status == FAIL]
    line = _describe(results)
    acceptance_log[key] = (not failed, line)
    with capsys.disabled():
        print(f"\n{'PASS' if not failed else 'FAIL'} {key}: {line}")
    assert not failed, "; ".join(f"{r.check}: {r.measured} vs {r.bound} {r.detail}" for r in failed)
