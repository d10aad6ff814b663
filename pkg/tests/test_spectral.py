import math

import numpy as np
import pytest
from scipy import integrate, special

from heatdiff.fields import GridField, TestFunctionSpec, make_field
from heatdiff.spaces import NormedSpace
from heatdiff.spectral import (gradient_energy, jacobi_mass, k_bound_rhs, k_constant, k_integrand, k_scan,
                               poisson_divergence_scan, prefactor, prefactor_by_volumes, truncated_integral,
                               verify_heat_identity)

# frozen after the first scan over n <= 10, gamma in [1e-3, 1e3]
C_K = 1.44


def test_prefactor_matches_volume_ratio():
    for n in range(1, 13):
        vol = lambda d: math.pi ** (d / 2) / special.gamma(d / 2 + 1)
        direct = n * (vol(n - 1) / vol(n))
        assert prefactor(n) == pytest.approx(direct, rel=1e-12)
        assert prefactor_by_volumes(n) == pytest.approx(prefactor(n), rel=1e-12)


def test_jacobi_mass():
    assert jacobi_mass(1) == pytest.approx(2.0)
    assert jacobi_mass(2) == pytest.approx(math.pi / 2)
    assert jacobi_mass(3) == pytest.approx(4.0 / 3.0)


def test_integrand_u_zero_slice():
    s = np.array([0.1, 0.5, 2.0])
    for g in (0.3, 1.0):
        assert np.allclose(k_integrand(s, 0.0, g), (1 - np.exp(-g * s * s)) ** 2 / s ** 3, rtol=1e-14)


def test_k_constant_against_scipy_dblquad_1d():
    # independent oracle: plain adaptive quadrature of the defining double integral for n = 1
    g = 1.0
    f = lambda u, s: float(k_integrand(np.array(s), np.array(u), g))
    inner = integrate.dblquad(f, 1e-6, 60.0, -1.0, 1.0, epsabs=1e-10, epsrel=1e-8)[0]
    # beyond s = 60 the Gaussian factor vanishes and the integrand is exactly 1/s^3 for each u
    ref = prefactor(1) * (inner + 2.0 / (2 * 60.0 ** 2))
    assert k_constant(1, g).k_value == pytest.approx(ref, rel=1e-4)


def test_k_constant_self_consistency():
    r = k_constant(1, 1.0)
    assert r.k_value > 0 and r.quadrature_error <= 1e-6 * r.k_value
    assert r.ratio == pytest.approx(r.k_value / r.bound_rhs)


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0])
def test_k_mesh_refinement(n, gamma):
    r = k_constant(n, gamma)
    assert r.quadrature_error <= 1e-6 * r.k_value


def test_k_gamma_scan_shape():
    gammas = [10.0 ** e for e in range(-3, 4)]
    vals = np.array([r.k_value for r in k_scan([1], gammas)])
    lo = vals.min()
    # linear growth at large gamma, logarithmic as gamma -> 0
    assert vals[-1] >= 10 * lo
    assert vals[0] >= 2 * lo
    assert np.argmin(vals) not in (0, len(vals) - 1)


def test_k_validation():
    with pytest.raises(ValueError):
        k_constant(1, 0.0)
    with pytest.raises(ValueError):
        k_constant(0, 1.0)
    with pytest.raises(ValueError):
        k_bound_rhs(1, -1.0)


def test_k_bound_rhs_asymptotics():
    assert k_bound_rhs(1, 1e3) / 1e3 == pytest.approx(1.0, abs=0.1)
    v = k_bound_rhs(1, 1.0)
    assert math.sqrt(math.pi) / 4 * math.log(2) + 1 <= v <= 10


def test_k_ratio_below_frozen_constant():
    ratios = [r.ratio for r in k_scan(range(1, 11), [10.0 ** e for e in range(-3, 4)])]
    assert max(ratios) <= C_K
    assert min(ratios) > 0


# heat identity -----------------------------------------------------------------------------------


def test_gradient_energy_gaussian():
    s = 0.3
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": s}), (-8, 8), 512, 1)
    # int (x / 2s)^2 exp(-x^2 / 2s) dx = sqrt(2 pi s) / (4 s)
    assert gradient_energy(f) == pytest.approx(math.sqrt(2 * math.pi * s) / (4 * s), rel=1e-8)


def test_identity_1d_gaussian():
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": 0.3}), (-8, 8), 512, 1)
    chk = verify_heat_identity(f, 1.0)
    assert chk.rel_gap <= 0.03


def test_identity_2d_bandlimited():
    f = make_field(TestFunctionSpec("random-bandlimited", {"radius": 2.0}, seed=1), (-8, 8), 128, 2)
    chk = verify_heat_identity(f, 0.5, ball_samples=32)
    assert chk.rel_gap <= 0.05


def test_identity_zero_field():
    f = GridField(np.zeros((128, 1)), (-8, 8))
    chk = verify_heat_identity(f, 1.0)
    assert chk.lhs == 0.0 and chk.rhs == 0.0 and chk.rel_gap == 0.0


def test_identity_validation():
    f = make_field(TestFunctionSpec("gaussian-bump", {"s": 0.3}), (-8, 8), 128, 1)
    with pytest.raises(ValueError):
        verify_heat_identity(f, 1.0, q=4.0)
    with pytest.raises(ValueError):
        verify_heat_identity(f, 1.0, y_p=1.0)
    with pytest.raises(ValueError):
        verify_heat_identity(make_field(TestFunctionSpec("gaussian-bump", {"s": 0.3}), (-8, 8), 64, 2), 1.0,
                             X=NormedSpace.lp(2, 1))


# Poisson divergence ---------------------------------------------------------------------------------


@pytest.mark.parametrize("gamma", [0.5, 1.0])
def test_poisson_slope(gamma):
    d = poisson_divergence_scan(1, gamma)
    assert d.slope > 0
    assert d.slope_error <= 0.15
    assert d.fit_residual <= 0.1
    assert d.heat_change <= 0.01


def test_poisson_slope_scales_with_gamma_squared():
    a = poisson_divergence_scan(1, 0.5).slope
    b = poisson_divergence_scan(1, 1.0).slope
    assert b / a == pytest.approx(4.0, rel=0.15)


def test_truncated_integral_validation():
    with pytest.raises(ValueError):
        truncated_integral(1, 1.0, 2.0)
    with pytest.raises(ValueError):
        poisson_divergence_scan(1, 1.0, cutoffs=(1e-2, 1e-3))
