import pytest

_LINES = []


@pytest.fixture
def report_line():
    """Record one PASS/FAIL summary line for the terminal summary."""
    def record(passed, label, detail):
        line = f"{'PASS' if passed else 'FAIL'} | {label} | {detail}"
        _LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
