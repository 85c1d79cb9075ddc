import pytest

from couplestab.dynamics import simulate
from couplestab.netmodel import FaultScenario, bundled_case, solve_power_flow

CASES = {
    "case1": FaultScenario(0.23, bus=34),
    "case2": FaultScenario(0.50, bus=4),
    "case3": FaultScenario(0.03, bus=4),
}


@pytest.fixture(scope="session")
def ne39():
    return bundled_case()


@pytest.fixture(scope="session")
def solved(ne39):
    return solve_power_flow(ne39)


@pytest.fixture(scope="session")
def trajectories(solved):
    return {k: simulate(solved, sc, 1e-3, sc.clearing_time + 2.0) for k, sc in CASES.items()}


@pytest.fixture(scope="session")
def case1(trajectories):
    return trajectories["case1"]


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
