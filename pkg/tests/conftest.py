import numpy as np
import pytest

from lagchaos.solver import ForcingSpec, NavierStokes2D, SnsState, SolverConfig, default_solver
from lagchaos.spectral import SpectralVelocity


def random_velocity(kmax, seed=0, decay=1.0):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((2 * kmax + 1, 2 * kmax + 1))
    r = np.arange(-kmax, kmax + 1)
    c *= 1.0 / (1.0 + np.hypot(*np.meshgrid(r, r, indexing="ij"))) ** decay
    c[kmax, kmax] = 0.0
    return SpectralVelocity(kmax, c)


@pytest.fixture(scope="session")
def small_solver():
    return NavierStokes2D(SolverConfig(kmax=5, gridsize=16), ForcingSpec(nstar=2))


@pytest.fixture(scope="session")
def solver():
    return default_solver()


@pytest.fixture(scope="session")
def burned(solver):
    """Default-config state after a short burn-in from rest."""
    rng = solver.noise_stream(1234, 0)
    return solver.burn_in(SnsState(SpectralVelocity.zeros(solver.kmax), 0.0), rng, 3.0)
