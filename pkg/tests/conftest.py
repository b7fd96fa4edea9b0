import re

import pytest

_RESULTS = {}


@pytest.fixture
def acceptance():
    """Record one acceptance line: acceptance("A1", passed, "detail")."""
    def record(key, passed, detail):
        line = f"{key} {'PASS' if passed else 'FAIL'}: {detail}"
        _RESULTS[key] = line
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=lambda k: int(re.sub(r"\D", "", k))):
        terminalreporter.write_line(_RESULTS[key])
