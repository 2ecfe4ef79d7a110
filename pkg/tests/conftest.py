import pytest

_LINES = []


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""

    def add(number: int, ok: bool, detail: str):
        _LINES.append((number, f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"))
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
