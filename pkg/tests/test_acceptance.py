"""End-to-end acceptance criteria at desk scale (tens of minutes on one core).

Each case prints one ``criterion <i> [PASS|FAIL]`` line to the terminal.
Deselect with ``-m "not acceptance"`` for a quick run.
"""

import pytest

from msmsim import acceptance


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, capsys):
    result = acceptance.CRITERIA[number]()
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.summary
