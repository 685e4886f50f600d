import numpy as np
import pytest

from heleshaw.lagrangian import LagrangianState
from heleshaw.massgrid import Domain, mass_grid_from_cumulative, uniform_mass_grid

SEED = 20240611


@pytest.fixture
def rng():
    return np.random.default_rng(SEED)


def random_positions(rng, K, domain=Domain(), spread=1.0):
    """Strictly increasing positions with log-uniform cell widths."""
    w = np.exp(rng.uniform(-spread, spread, K))
    x = domain.a + domain.length * np.concatenate([[0.0], np.cumsum(w) / w.sum()])
    x[-1] = domain.b
    return x


def random_grid(rng, K, M=1.0, uniform=False, spread=0.5):
    if uniform:
        return uniform_mass_grid(K, M)
    dm = np.exp(rng.uniform(-spread, spread, K))
    xi = M * np.concatenate([[0.0], np.cumsum(dm) / dm.sum()])
    xi[-1] = M
    return mass_grid_from_cumulative(xi)


def random_state(rng, K, M=1.0, uniform=True, domain=Domain(), spread=1.0):
    grid = random_grid(rng, K, M, uniform)
    return LagrangianState(random_positions(rng, K, domain, spread), grid, domain)


def k2_example():
    """x = (0, 0.25, 1) on the uniform grid K=2, M=1: z = (2, 2/3)."""
    return LagrangianState(np.array([0.0, 0.25, 1.0]), uniform_mass_grid(2, 1.0), Domain())


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
