"""Acceptance criteria at full tolerances.

Each criterion prints one ``[PASS]``/``[FAIL]`` line. The full profile takes
several minutes; set ``DEGENLAB_PROFILE=smoke`` for a quick local pass with
reduced sizes (same tolerances, no runtime limits).
"""
import os

import pytest

from degenlab.acceptance import CRITERIA, run_criterion

PROFILE = os.environ.get("DEGENLAB_PROFILE", "full")


@pytest.mark.parametrize("cid", sorted(CRITERIA), ids=lambda c: f"c{c:02d}_{CRITERIA[c][0].replace(' ', '_')}")
def test_criterion(cid, capsys):
    r = run_criterion(cid, PROFILE)
    with capsys.disabled():
        print("\n" + r.line())
    assert r.passed, r.line()
