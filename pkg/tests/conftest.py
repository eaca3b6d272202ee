import pytest

_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    """Record one summary line per acceptance criterion."""

    def record(criterion, passed, detail):
        _ACCEPTANCE.append(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
