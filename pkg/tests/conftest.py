import pytest

from fragrate import BetaBinary, TableBinary, UniformBinary


@pytest.fixture(scope="session")
def uniform():
    return UniformBinary()


@pytest.fixture(scope="session")
def beta():
    return BetaBinary(0.5)


@pytest.fixture(scope="session")
def table():
    # largest piece u in (0.6, 0.9): small piece bounded away from 0
    return TableBinary(((0.6, 0.0), (0.7, 2.0), (0.8, 1.0), (0.9, 0.0)))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
