import os

import numpy as np
import pytest
from hypothesis import settings

from gasmarket import fixtures as F
from gasmarket.collocation import build_grid
from gasmarket.network import nondimensionalize, refine_network
from gasmarket.transcription import optimize

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))

# acceptance lines, printed in the terminal summary
ACCEPTANCE = []

DATA = os.path.join(os.path.dirname(__file__), os.pardir, "src", "gasmarket", "data")


def prepared(net, delta=10_000.0):
    return nondimensionalize(refine_network(net, delta), F.default_scaling())


def day_grid(net, market, n=24):
    return build_grid(market.hours * market.hour_seconds / net.scaling.time, n)


def solve_case(net, market, n=24, **kw):
    return optimize(net, market, day_grid(net, market, n), **kw)


@pytest.fixture(scope="session")
def toy_solution():
    net = F.single_pipe()
    mk = F.toy_market()
    return optimize(net, mk, build_grid(24.0, 24))


@pytest.fixture(scope="session")
def line3_nd():
    return prepared(F.line3())


@pytest.fixture(scope="session")
def line3_solution(line3_nd):
    return solve_case(line3_nd, F.line3_market())


@pytest.fixture(scope="session")
def line3_binding():
    """Booster allowed up to 3.0 so the 55 bar cap, not the ratio, limits delivery."""
    net = prepared(F.line3(maop_bar=55.0, ratio_max=3.0))
    return net, solve_case(net, F.line3_market())


@pytest.fixture(scope="session")
def line3_relaxed():
    net = prepared(F.line3(maop_bar=80.0, ratio_max=3.0))
    return net, solve_case(net, F.line3_market())


@pytest.fixture(scope="session")
def synthetic25_solution():
    net = prepared(F.synthetic25())
    return net, solve_case(net, F.synthetic25_market())


@pytest.fixture(scope="session")
def long_line_solutions():
    net = prepared(F.long_line())
    mk = F.long_line_market()
    return {n: solve_case(net, mk, n) for n in (24, 48)}


def node_row(net, node_id):
    return [n.id for n in net.nonslack_nodes].index(node_id)


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
