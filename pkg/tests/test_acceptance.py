"""Every acceptance criterion at its stated tolerance; one PASS/FAIL line each (run with -s)."""
import pytest

from bevproj.acceptance import CRITERIA, format_result, run_criterion


@pytest.mark.parametrize("crit", CRITERIA, ids=[c.id for c in CRITERIA])
def test_criterion(crit):
    ok, detail, dt = run_criterion(crit)
    line = format_result(crit, ok, detail, dt)
    print(line)
    assert ok, line
