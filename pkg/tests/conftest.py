"""Shared fixtures and the acceptance summary printed at the end of a run."""

import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Store one ``PASS``/``FAIL`` line for an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> None:
        _CRITERIA[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(_CRITERIA[number])

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
