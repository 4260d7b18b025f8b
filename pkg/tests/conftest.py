import pytest

from _configs import p0_market, p0_prefs
from cara_retire.policy import solve

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def market():
    return p0_market()


@pytest.fixture(scope="session")
def prefs():
    return p0_prefs()


@pytest.fixture(scope="session")
def sol(market, prefs):
    return solve(market, prefs)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
