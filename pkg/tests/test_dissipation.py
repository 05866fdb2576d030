import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from granular import dissipation as dis
from granular import restitution as rst
from granular.errors import DomainError, NumericError
from granular.quadrature import QuadratureConfig, integrate
from granular.scaling import ScalingSchedule

VISCO = rst.viscoelastic(1.0)


def test_integrate_polynomial_and_batch():
    res = integrate(lambda x: np.stack([x ** 3, np.exp(x)]), 0.0, 2.0)
    assert res.value[0] == pytest.approx(4.0, rel=1e-14)
    assert res.value[1] == pytest.approx(math.exp(2.0) - 1.0, rel=1e-14)


def test_integrate_refines_singular_endpoint():
    res = integrate(lambda x: np.sqrt(x), 0.0, 1.0)
    assert res.value == pytest.approx(2.0 / 3.0, rel=1e-11)
    assert res.panels > 8


def test_integrate_reports_failure():
    with pytest.raises(NumericError):
        integrate(lambda x: np.sign(x - 0.3) * np.abs(x - 0.3) ** -0.9, 0.0, 1.0,
                  QuadratureConfig(max_panels=64))


def test_quadrature_config_guards():
    with pytest.raises(DomainError):
        QuadratureConfig(panels=4)
    with pytest.raises(DomainError):
        QuadratureConfig(abs_tol=1e-16, rel_tol=1e-16)


def test_psi_elastic_zero():
    assert np.all(dis.psi(rst.constant(1.0), np.array([0.1, 1.0, 10.0])) == 0)


@pytest.mark.parametrize("e0", [0.2, 0.5, 0.9])
def test_psi_constant_closed_form(e0):
    r = np.array([0.1, 1.0, 10.0])
    exact = r ** 1.5 * (1 - e0 ** 2) / 8
    assert np.allclose(dis.psi(rst.constant(e0), r), exact, rtol=1e-10, atol=0)


def test_psi_visco_small_r_slope_converges():
    r = np.array([1e-8, 1e-7, 1e-6])
    s = np.polyfit(np.log(r), np.log(dis.psi(VISCO, r ** 2)), 1)[0]
    assert abs(s - 3.2) < 0.02
    # the next-order term is positive relative to the leading one, so the slope rises towards 3.2
    r2 = np.array([1e-4, 1e-3, 1e-2])
    s2 = np.polyfit(np.log(r2), np.log(dis.psi(VISCO, r2 ** 2)), 1)[0]
    assert s2 < s < 3.2


def test_psi_leading_term():
    r = 1e-10
    lead = 1.0 / (4.0 + 0.2) * r ** 3.2
    assert dis.psi(VISCO, r * r) == pytest.approx(lead, rel=2e-2)


def test_psi_monotone():
    r = np.geomspace(1e-6, 1e4, 60)
    assert np.all(np.diff(dis.psi(VISCO, r)) > 0)


def test_psi_rescaled_bound():
    ells = np.geomspace(1e-10, 1.0, 11)
    r = np.geomspace(1e-3, 1e2, 30)
    ratios = [np.max(dis.psi_rescaled(VISCO, ell, r ** 2) / (ell ** 0.2 * r ** 3.2)) for ell in ells]
    assert np.isfinite(ratios).all() and max(ratios) <= 1.0 / 4.2 * (1 + 1e-9)


def test_moment_K():
    assert dis.moment_K(0.0) == pytest.approx(8 * math.sqrt(2) / math.sqrt(math.pi), rel=1e-12)
    assert dis.moment_K(2.2) / dis.moment_K(0.2) == pytest.approx(6.2, rel=1e-10)
    assert dis.moment_K(2.2) - 5 * dis.moment_K(0.2) == pytest.approx(1.2 * dis.moment_K(0.2), rel=1e-10)


@given(st.floats(min_value=-2.9, max_value=8.0))
@settings(max_examples=40, deadline=None)
def test_moment_K_matches_closed_form(s):
    assert dis.moment_K(s) == pytest.approx(dis.moment_K_closed(s), rel=1e-10)


@given(st.floats(min_value=-3.5, max_value=4.0), st.integers(min_value=1, max_value=5))
@settings(max_examples=40, deadline=None)
def test_sign_integral(alpha, d):
    if 3 + alpha <= -d + 0.05:
        return
    val = dis.gaussian_sign_integral(alpha, d)
    assert val == pytest.approx(dis.gaussian_sign_integral_closed(alpha, d), rel=1e-8, abs=1e-10)
    if abs(alpha + 1) > 1e-6:
        assert np.sign(val) == np.sign(alpha + 1)


def test_kinetic_constants():
    k = dis.kinetic_constants(VISCO)
    assert k.ratio == pytest.approx(1.2, rel=1e-8)
    assert dis.maxwellian_energy(1.7) == pytest.approx(3 * 1.7, rel=1e-12)
    k2 = dis.kinetic_constants(VISCO, theta_star=2.0)
    assert k2.ratio == pytest.approx(1.2, rel=1e-8)


def test_D_constant_closed_form():
    e0 = 0.5
    exact = (1 - e0 ** 2) / 8 * 2 ** 1.5 * dis.moment_K(0.0)
    assert dis.maxwellian_dissipation_D(rst.constant(e0), 1.0) == pytest.approx(exact, rel=1e-8)
    assert dis.maxwellian_dissipation_D(rst.constant(1.0), 0.3) == 0


def test_tau_tends_to_one():
    ell = np.geomspace(1e-6, 1e-2, 5)
    tau = np.array([dis.energy_flux_ratio(VISCO, x) for x in ell])
    assert np.all(np.diff(np.abs(tau - 1)) > 0)
    slope = np.polyfit(np.log(ell), np.log(np.abs(tau - 1)), 1)[0]
    assert abs(slope - 0.2) < 0.05


def test_lambda_elastic_is_pure_drift():
    sch = ScalingSchedule(0.1, 0.2, 0.9)
    for t in (0.0, 2.0):
        assert dis.lambda_eps(rst.constant(1.0), sch, t) == pytest.approx(-2 * sch.xi(t))


def test_lambda_bracket_and_rate():
    a2 = dis.kinetic_constants(VISCO).a2
    a1 = dis.kinetic_constants(VISCO).a1
    sch = ScalingSchedule(1e-3, 0.2, a1)
    assert 0.9 * a2 <= dis.lambda_eps(VISCO, sch, 0.0) * sch.z(0.0) ** -0.2 <= 1.1 * a2
    eps = np.array([1e-3, 1e-2, 3e-2, 0.1])
    ells, gaps = [], []
    for e in eps:
        s = ScalingSchedule(float(e), 0.2, a1)
        ells.append(s.ell(0.0))
        gaps.append(abs(dis.lambda_eps(VISCO, s, 0.0) * s.z(0.0) ** -0.2 - a2))
    slope = np.polyfit(np.log(ells), np.log(gaps), 1)[0]
    assert abs(slope - 0.2) < 0.05


def test_q_mm_elastic_and_mass():
    est = dis.q_mm_weighted_norm(rst.constant(1.0), 0.1, 100_000, rng=1)
    assert est.norm == 0.0


def test_q_mm_standard_error_scaling():
    a = dis.q_mm_weighted_norm(VISCO, 0.1, 100_000, rng=2)
    b = dis.q_mm_weighted_norm(VISCO, 0.1, 200_000, rng=3)
    assert b.squared_std_error / a.squared_std_error == pytest.approx(1 / math.sqrt(2), rel=0.15)
    assert abs(a.squared - b.squared) < 4 * math.hypot(a.squared_std_error, b.squared_std_error)


def test_q_mm_requires_samples():
    with pytest.raises(DomainError):
        dis.q_mm_weighted_norm(VISCO, 0.1, 1000)


def test_quadrature_resolution_independent():
    fine = QuadratureConfig(panels=32, order=24)
    assert dis.maxwellian_dissipation_D(VISCO, 1e-3) == pytest.approx(
        dis.maxwellian_dissipation_D(VISCO, 1e-3, cfg=fine), rel=1e-11)


def test_q_mm_rate_at_small_scales():
    # the rate is asymptotic; at moderate scales the next-order correction still bends the curve
    ells = np.array([1e-12, 1e-9, 1e-6])
    norms = [dis.q_mm_weighted_norm(VISCO, float(x), 200_000, rng=np.random.default_rng([4, i])).norm
             for i, x in enumerate(ells)]
    slope = np.polyfit(np.log(ells), np.log(norms), 1)[0]
    assert abs(slope - 0.2) < 0.05
