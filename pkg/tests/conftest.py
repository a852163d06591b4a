import os

import pytest

_LINES = []


@pytest.fixture(scope="session")
def report():
    """Collects one verdict line per acceptance criterion."""

    def add(line):
        _LINES.append(line)
        print(line)

    return add


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _LINES:
        terminalreporter.write_line(line)
    out = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "acceptance_results")
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(_LINES) + "\n")
