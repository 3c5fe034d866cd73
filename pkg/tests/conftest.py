import pytest

_CRITERIA = {}


@pytest.fixture
def record_criterion():
    """Store one acceptance verdict; the lines are printed in the terminal summary."""

    def record(number, title, passed, detail, seconds, limit):
        ok = bool(passed) and seconds < limit
        _CRITERIA[number] = (title, ok, detail, seconds, limit)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok, detail, seconds, limit = _CRITERIA[n]
        terminalreporter.write_line(
            f"{'PASS' if ok else 'FAIL'}  criterion {n:2d}  {title}: {detail}  [{seconds:.1f} s, limit {limit:g} s]")
