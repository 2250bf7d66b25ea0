import pytest

ACCEPTANCE = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line: (number, title, status, detail, seconds)."""

    def record(number, title, ok, detail, seconds):
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        ACCEPTANCE.append((number, title, status, detail, seconds))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, status, detail, seconds in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2} {status:<4} {title} [{seconds:.1f}s] {detail}")
