import pytest

_LINES = []


@pytest.fixture
def verdict():
    """Record one ``ACCEPTANCE n: PASS|FAIL detail`` line and echo it."""
    def emit(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        _LINES.append(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
