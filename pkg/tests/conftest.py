import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line, echo it, then assert the criterion."""
    def _report(number: int, title: str, passed: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}" + (f": {detail}" if detail else "")
        _LINES.append(line)
        print(line)
        assert passed, line
    return _report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
