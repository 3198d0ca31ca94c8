import numpy as np
import pytest

from coulomb_ot.cost import CostModel
from coulomb_ot.duality import ruschendorf_potentials
from coulomb_ot.measures import DensitySpec, DiscreteMeasure, discretize, nonconcentration_radius
from coulomb_ot.solver import solve_lp


def uniform(n, L=1.0):
    return discretize(DensitySpec.uniform_interval(L), n)


def atoms(points, weights=None):
    points = np.asarray(points, float)
    n = len(points)
    w = np.full(n, 1.0 / n) if weights is None else weights
    return DiscreteMeasure(points, w, 1.0 / n)


class Uniform1D:
    """LP plan, modified cost and potentials for the uniform law on [0, 1]."""

    def __init__(self, n):
        self.n = n
        self.mu = uniform(n)
        self.r0 = nonconcentration_radius(self.mu, self.mu, 0.5)
        self.delta = 0.9 * self.r0 / 2
        self.c0 = CostModel.coulomb(1)
        self.cd = CostModel.modified(self.delta, 1)
        self.plan, self.report = solve_lp(self.mu, self.mu, self.c0)
        self.pots = ruschendorf_potentials(self.plan, self.cd)


_cache = {}


def uniform_case(n):
    if n not in _cache:
        _cache[n] = Uniform1D(n)
    return _cache[n]


@pytest.fixture(scope="session")
def u200():
    return uniform_case(200)


@pytest.fixture(scope="session")
def u50():
    return uniform_case(50)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_criteria = []


def record_criterion(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
    _criteria.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in _criteria:
            terminalreporter.write_line(line)
