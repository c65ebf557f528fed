import numpy as np
import pytest

from cyflab.geometry import DefinitenessError, GeometryError, d_z, fiber_integral
from cyflab.masolver import BaseStencil
from cyflab.models import (
    EllipticOracle,
    FamilySpec,
    FourierPoly,
    compare_report,
    make_family,
)
from conftest import perturbation_chi


def test_fourier_poly_derivatives(grid64):
    chi = FourierPoly(1, {(1, 0, 2, 1): 0.5 + 0.25j, (-1, 0, 1, 2): 0.5 - 0.25j})
    assert chi.realness_residual() < 1e-15
    s = 0.3 + 0.7j
    x = grid64.coords[0]
    expected = (0.5 + 0.25j) * np.exp(2j * np.pi * x) * s ** 2 * np.conj(s)
    expected = expected + np.conj(expected)
    assert np.max(np.abs(chi.eval(grid64, s) - expected)) < 1e-13
    # d/ds lowers p with factor p
    ds = chi.ds().eval(grid64, s)
    expected_ds = 2 * (0.5 + 0.25j) * np.exp(2j * np.pi * x) * s * np.conj(s) \
        + (0.5 - 0.25j) * np.exp(-2j * np.pi * x) * np.conj(s) ** 2
    assert np.max(np.abs(ds - expected_ds)) < 1e-13


def test_fourier_poly_validation(grid64):
    with pytest.raises(GeometryError):
        FourierPoly(1, {(1, 0, -1, 0): 1.0})
    lopsided = FourierPoly(1, {(1, 0, 0, 0): 1.0})
    assert lopsided.realness_residual() > 0.5
    big = FourierPoly(1, {(40, 0, 0, 0): 0.5, (-40, 0, 0, 0): 0.5})
    with pytest.raises(GeometryError):
        big.eval(grid64, 1j)


def test_family_spec_validation():
    with pytest.raises(GeometryError):
        FamilySpec(kind="banana")
    with pytest.raises(GeometryError):
        FamilySpec(kind="modulus_map", n=2)
    with pytest.raises(GeometryError):
        FamilySpec(kind="product", chi=FourierPoly(1, {(1, 0, 0, 0): 1.0}))
    with pytest.raises(DefinitenessError):
        make_family(FamilySpec(kind="universal_elliptic", base_samples=(1.0 - 1j,)))
    # a potential violent enough to destroy fiber positivity is rejected
    with pytest.raises(DefinitenessError):
        make_family(FamilySpec(kind="universal_elliptic",
                               chi=perturbation_chi(0.5), base_samples=(1j,)))


def test_elliptic_oracle_values(elliptic_family):
    oracle = EllipticOracle(elliptic_family.grid)
    assert oracle.evaluate("c", 1j) == 1.0
    assert abs(oracle.evaluate("theta", 0.5 + 2j) - 1.0 / 16.0) < 1e-15
    hzz = oracle.evaluate("h_zz", 2j)
    assert np.max(np.abs(hzz - 0.5)) < 1e-15
    with pytest.raises(DefinitenessError):
        oracle.evaluate("c", 1.0)
    with pytest.raises(GeometryError):
        oracle.evaluate("nonsense", 1j)


def test_oracle_deck_invariance(elliptic_family):
    oracle = EllipticOracle(elliptic_family.grid)
    for s in (1j, 0.3 + 0.8j):
        for m in (1, 2):
            assert oracle.invariance_residual(s, m=m) < 1e-12


def test_model_matches_oracle_exactly(elliptic_family):
    oracle = EllipticOracle(elliptic_family.grid)
    for s in (1j, 0.3 + 0.8j, 2j):
        form = elliptic_family.omega(s)
        ofrm = oracle.form(s)
        assert np.max(np.abs(form.gab - ofrm.gab)) < 1e-15
        assert np.max(np.abs(form.gsb - ofrm.gsb)) < 1e-15
        assert np.max(np.abs(form.gss - ofrm.gss)) < 1e-15


def test_closedness_residual(perturbed_family):
    """d(omega) = 0: dz(g_{s zbar}) equals D_s(g_{z zbar}) at fixed z."""
    fam = perturbed_family
    s = 0.2 + 1.0j
    form = fam.omega(s)
    tau, taup = fam.tau(s), fam.tau_prime(s)
    D = tau - np.conj(tau)
    gzz = form.gab[0, 0]
    y = fam.grid.coords[1]
    # exact D_s g_zz: the periodic combination from the family minus the
    # lift-transport term
    ds_gzz = fam.vrho_gzz(s, np.zeros(fam.grid.shape)) - taup * y * d_z(gzz, form.chart)
    lhs = -taup * (gzz / D) - taup * y * d_z(gzz, form.chart) \
        + d_z(form.ystruct.msz, form.chart)
    assert np.max(np.abs(lhs - ds_gzz)) < 1e-12


def test_closedness_against_stencil(perturbed_family):
    """FD consistency across the stencil: the spec-level closedness check.

    vrho_gzz with a trivial periodic lift part is exactly the fixed-grid
    s-derivative of g_zz, so central differences must reproduce it to
    O(h^2).
    """
    fam = perturbed_family
    s, h = 0.2 + 1.0j, 1e-4
    gzz = {}
    for i, j in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        gzz[(i, j)] = fam.omega(s + h * (i + 1j * j)).gab[0, 0]
    d_re = (gzz[(1, 0)] - gzz[(-1, 0)]) / (2 * h)
    d_im = (gzz[(0, 1)] - gzz[(0, -1)]) / (2 * h)
    fd = (d_re - 1j * d_im) / 2
    exact = fam.vrho_gzz(s, np.zeros(fam.grid.shape))
    assert np.max(np.abs(fd - exact)) < 10 * h ** 2


def test_volume_constant_across_base(perturbed_family):
    """d/ds of the fiber volume vanishes for model-plus-potential forms."""
    fam = perturbed_family
    s, h = 0.2 + 1.0j, 1e-3
    vols = {}
    for i, j in ((1, 0), (-1, 0), (0, 1), (0, -1), (0, 0)):
        sp = s + h * (i + 1j * j)
        form = fam.omega(sp)
        vols[(i, j)] = fiber_integral(np.ones(fam.grid.shape), form.chart,
                                      metric=form.gab)
    dv = max(abs(vols[(1, 0)] - vols[(-1, 0)]), abs(vols[(0, 1)] - vols[(0, -1)])) / (2 * h)
    assert dv < 10 * h ** 2
    assert abs(vols[(0, 0)] - 1.0) < 1e-13  # unit-volume model


def test_form_hermitian_and_positive(perturbed_family):
    form = perturbed_family.omega(0.2 + 1.0j)
    assert np.max(np.abs(form.gss.imag)) < 1e-13
    assert form.fiber_min_eig() > 0
    full = form.full_matrix()
    assert np.max(np.abs(full[0, 1] - np.conj(full[1, 0]))) < 1e-15


def test_n2_product_family():
    spec = FamilySpec(kind="product", n=2,
                      omega_matrix=np.array([[1j, 0.2], [0.2, 1.5j]]),
                      grid_n=12, base_samples=(0.1 + 0.2j,))
    fam = make_family(spec)
    form = fam.omega(0.1 + 0.2j)
    assert form.gab.shape[:2] == (2, 2)
    assert form.fiber_min_eig() > 0


def test_base_derivative_kills_fiber_coordinate():
    """D_s applied to z vanishes and applied to s gives 1 (fixed-z derivative).

    D_s = d/ds|grid - tau'(s) y d/dz; the grid samples of z at the stencil
    points combine with the exact chain-rule derivative dz(z) = 1.
    """
    from cyflab.geometry import linear_coeff_derivative
    from cyflab.masolver import BaseStencil, _fd_ds

    spec = FamilySpec(kind="modulus_map", modulus_coeffs=(0.0, 1.0, 0.1),
                      grid_n=16, base_samples=(0.2 + 1.1j,))
    fam = make_family(spec)
    stencil = BaseStencil(center=0.2 + 1.1j, h_s=1e-4)
    x, y = fam.grid.coords
    z_stack = {key: x + fam.tau(stencil.point(*key)) * y
               for key in stencil.offsets()}
    s_stack = {key: np.full(fam.grid.shape, stencil.point(*key))
               for key in stencil.offsets()}
    taup = fam.tau_prime(stencil.center)
    chart = fam.chart(stencil.center)
    dz_z = linear_coeff_derivative(chart, (1, fam.tau(stencil.center)), ("z", 0))
    ds_z = _fd_ds(z_stack, stencil.h_s) - taup * y * dz_z
    assert np.max(np.abs(ds_z)) < 1e-10
    ds_s = _fd_ds(s_stack, stencil.h_s)          # s has no fiber dependence
    assert np.max(np.abs(ds_s - 1.0)) < 1e-10


def test_compare_report():
    out = compare_report({"c": 1.0 + 1e-12}, {"c": 1.0}, {"c": 1e-10})
    assert out["pass"]
    out = compare_report({"c": 1.1}, {"c": 1.0}, {"c": 1e-10})
    assert not out["pass"]
