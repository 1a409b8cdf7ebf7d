"""Shared pytest plumbing: collects acceptance verdict lines for the terminal summary."""

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(criterion, passed, detail)``."""

    def record(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
        _VERDICTS.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS, key=lambda s: s.split(":")[0]):
            terminalreporter.write_line(line)
