import numpy as np
import pytest

from cellflux import DomainSpec, FluxSpec, Point2, generate_mesh


@pytest.fixture(scope="session")
def holed_small():
    """Coarse holed mesh: unit-ish cell in a small square, cheap to assemble."""
    return generate_mesh(DomainSpec(2.0, Point2(0.0, 0.0), 0.5, True, 0.25))


@pytest.fixture(scope="session")
def full_small():
    return generate_mesh(DomainSpec(2.0, Point2(0.0, 0.0), 0.5, False, 0.25))


@pytest.fixture(scope="session")
def unit_flux():
    """Reference flux: phi0 = rho = 1, n = 1 on the unit circle at the origin."""
    return FluxSpec.from_rho(1.0, 1.0, 1, Point2(0.0, 0.0), 1.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
