import numpy as np
import pytest

from cyflab.geometry import FiberChart, FiberGrid
from cyflab.models import FamilySpec, FourierPoly, make_family


@pytest.fixture(scope="session")
def grid64():
    return FiberGrid(1, 64)


@pytest.fixture(scope="session")
def square_chart(grid64):
    return FiberChart.make(grid64, tau=1j)


@pytest.fixture(scope="session")
def elliptic_family():
    """Universal elliptic family, unperturbed (the closed-form oracle)."""
    spec = FamilySpec(kind="universal_elliptic", grid_n=64,
                      base_samples=(1j, 0.3 + 0.8j, 2j))
    return make_family(spec)


def perturbation_chi(amplitude=0.05):
    """chi = amplitude * cos(2 pi x) * (1 + Re s): the standard test potential."""
    return FourierPoly.real_cosine(1, (1, 0), {(0, 0): 1.0, (1, 0): 0.5, (0, 1): 0.5},
                                   amplitude)


@pytest.fixture(scope="session")
def perturbed_family():
    spec = FamilySpec(kind="universal_elliptic", chi=perturbation_chi(), grid_n=64,
                      base_samples=(1j, 0.2 + 1.0j))
    return make_family(spec)


@pytest.fixture(scope="session")
def product_family():
    spec = FamilySpec(kind="product", tau0=1j, chi=perturbation_chi(), grid_n=64,
                      base_samples=(0.2 + 0.3j,))
    return make_family(spec)


def random_trig_field(rng, grid, kmax=3, terms=6, real=True):
    """Band-limited random field for property tests."""
    f = np.zeros(grid.shape, dtype=complex)
    for _ in range(terms):
        k = rng.randint(-kmax, kmax + 1, size=2 * grid.n)
        amp = rng.standard_normal() + 1j * rng.standard_normal()
        phase = sum(kk * grid.coords[ax] for ax, kk in enumerate(k))
        f += amp * np.exp(2j * np.pi * phase)
    return f.real.astype(complex) if real else f
