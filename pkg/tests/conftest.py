from __future__ import annotations

import pytest

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
