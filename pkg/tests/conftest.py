import numpy as np
import pytest

from fppopf import bundled_case, parse_case
from fppopf.driver import SolverOptions
from fppopf.pipeline import diagnose, solve
from fppopf.problem import assemble


def load(name):
    return parse_case(bundled_case(name))


@pytest.fixture(scope="session")
def wb5():
    net, cost = load("wb5.m")
    return net, cost, assemble(net, cost)


@pytest.fixture(scope="session")
def wb5_report():
    net, cost = load("wb5.m")
    return solve(net, cost)


@pytest.fixture(scope="session")
def wb5_mod_diagnosis():
    net, cost = load("wb5_mod.m")
    return diagnose(net, cost)


@pytest.fixture(scope="session")
def case14q_report():
    net, cost = load("case14Q.m")
    return solve(net, cost)


@pytest.fixture(scope="session")
def case9mod_diagnosis():
    net, cost = load("case9mod.m")
    return diagnose(net, cost)


@pytest.fixture(scope="session")
def case9mod_relaxed_report():
    net, cost = load("case9mod_relaxed.m")
    return solve(net, cost)


@pytest.fixture(scope="session")
def feeder():
    net, cost = load("feeder37_synthetic.json")
    return net, cost, assemble(net, cost)


@pytest.fixture(scope="session")
def feeder_report(feeder):
    net, cost, problem = feeder
    return solve(net, cost, problem=problem)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def default_opts():
    return SolverOptions()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
