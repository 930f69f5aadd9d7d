import pytest

CRITERIA = []


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints one acceptance line."""

    def report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
        CRITERIA.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
