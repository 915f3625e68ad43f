import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

N_CRITERIA = 11
RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """``record(number, passed, detail)`` stores one acceptance line."""

    def _record(number: int, passed: bool, detail: str) -> bool:
        RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
        return bool(passed)

    return _record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid for rs in terminalreporter.stats.values() for r in rs
              if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in RESULTS:
            ok, detail = RESULTS[n]
            terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:>2}: FAIL  not evaluated (error or deselected)")
