import numpy as np
import pytest

from dnflow.grid import BoxDomain
from dnflow.potentials import quadratic_F, quadratic_psi, soft_quadratic_F, soft_quadratic_psi
from dnflow.stepper import SolverConfig, run_scheme


def sine_datum(domain):
    return np.sin(np.pi * domain.node_coords()[..., 0])[..., None]


@pytest.fixture(scope="session")
def unit_interval():
    return BoxDomain(1, (0.0,), (1.0,), (99,))


@pytest.fixture(scope="session")
def heat_run(unit_interval):
    return run_scheme(sine_datum(unit_interval), quadratic_psi(1), quadratic_F(1, 1), 100, 0.1,
                      SolverConfig(), unit_interval)


@pytest.fixture(scope="session")
def soft_run(unit_interval):
    return run_scheme(sine_datum(unit_interval), soft_quadratic_psi(1, 0.5), soft_quadratic_F(1, 1, 0.5),
                      100, 0.1, SolverConfig(), unit_interval)


@pytest.fixture(scope="session")
def square_run():
    dom = BoxDomain(2, (0.0, 0.0), (1.0, 1.0), (15, 15))
    X = dom.node_coords()
    g = (np.sin(np.pi * X[..., 0]) * np.sin(np.pi * X[..., 1]))[..., None] * np.array([1.0, -0.5])
    return run_scheme(g, soft_quadratic_psi(2, 0.5), soft_quadratic_F(2, 2, 0.5), 10, 0.02,
                      SolverConfig(), dom)
