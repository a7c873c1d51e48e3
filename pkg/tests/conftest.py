import pytest

_ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    """Record a PASS/FAIL line for the acceptance summary, then assert."""

    def record(number, passed, detail):
        _ACCEPTANCE.append((number, bool(passed), detail))
        assert passed, f"criterion {number}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}")
