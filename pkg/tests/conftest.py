import pytest

_LINES = {}


@pytest.fixture(scope="session")
def verdict():
    """Record one summary line per acceptance criterion; printed at the end of the run."""

    def record(key, ok, detail):
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[key] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=lambda k: (len(str(k)), str(k))):
        terminalreporter.write_line(_LINES[key])
