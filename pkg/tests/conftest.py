"""Collects acceptance verdicts and prints them at the end of the run."""
import pytest

RESULTS = []


@pytest.fixture
def record():
    """``record(criterion, passed, detail)`` logs one PASS/FAIL line."""

    def _record(criterion: str, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {criterion}: {detail}"
        RESULTS.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
