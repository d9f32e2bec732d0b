import pytest

import growth_frictions as gf

# Reference parameter set used across the suite: r=0, mu=0.096, sigma=0.4,
# gamma=0.003 (Merton fraction 0.6, f(1)=0.016, f(hhat)=0.0288).
GAMMA = 0.003


@pytest.fixture(scope="session")
def mp():
    return gf.MarketParams(r=0.0, mu=0.096, sigma=0.4)


@pytest.fixture(scope="session")
def cp():
    return gf.CostParams(delta=1e-3, gamma=GAMMA)


@pytest.fixture(scope="session")
def sol(mp, cp):
    return gf.solve_boundaries(mp, cp)


@pytest.fixture(scope="session")
def lim(mp):
    return gf.solve_limit(mp, GAMMA)


@pytest.fixture(scope="session")
def vf(mp, cp, sol):
    return gf.build_value(mp, cp, sol)


@pytest.fixture(scope="session")
def sweep(mp):
    return gf.sweep_delta(mp, GAMMA, (1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 1e-5, 1e-6))
