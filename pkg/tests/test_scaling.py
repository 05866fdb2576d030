import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from granular import scaling as sc
from granular.errors import DomainError
from granular.scaling import ScalingSchedule

eps_st = st.floats(min_value=0.05, max_value=1.0)
gamma_st = st.floats(min_value=0.1, max_value=2.0)
time_st = st.floats(min_value=0.0, max_value=50.0)


def _schedule(eps, gamma, a1=0.9):
    return ScalingSchedule(eps, gamma, a1, b1=sc.identity_b1(eps, gamma))


def _central(f, t, eps):
    # the schedule's intrinsic time scale is eps^2, so the step is relative to it
    h = 1e-5 * eps ** 2 * (1.0 + t)
    t = max(t, 2 * h)
    return t, (f(t + h) - f(t - h)) / (2 * h)


def test_xi_at_zero_equals_a1_when_b1_is_one():
    assert ScalingSchedule(0.3, 0.2, 0.9).xi(0.0) == pytest.approx(0.9, rel=1e-15)


@settings(max_examples=60, deadline=None)
@given(eps_st, gamma_st, time_st)
def test_tau_derivative_is_inverse_velocity_scale(eps, gamma, t):
    s = _schedule(eps, gamma)
    t, fd = _central(s.tau, t, eps)
    assert fd == pytest.approx(1.0 / s.V(t), rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(eps_st, gamma_st, time_st)
def test_v_dot_matches_difference(eps, gamma, t):
    s = _schedule(eps, gamma)
    t, fd = _central(s.V, t, eps)
    assert fd == pytest.approx(s.V_dot(t), rel=1e-6)


@settings(max_examples=60, deadline=None)
@given(eps_st, gamma_st, time_st)
def test_xi_is_log_growth_in_rescaled_time(eps, gamma, t):
    s = _schedule(eps, gamma)
    assert s.xi(s.tau(t)) == pytest.approx(s.V_dot(t), rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(eps_st, gamma_st, time_st, time_st)
def test_xi_integral_matches_quadrature(eps, gamma, t0, t1):
    s = ScalingSchedule(eps, gamma, 0.9)
    lo, hi = sorted((t0, t1))
    quad = integrate.quad(s.xi, lo, hi, epsabs=0, epsrel=1e-13)[0]
    assert s.xi_integral(lo, hi) == pytest.approx(quad, rel=1e-10, abs=1e-14)
    assert sc.stretch_factor(s, lo, hi) == pytest.approx(math.exp(quad), rel=1e-10)


@settings(max_examples=60, deadline=None)
@given(eps_st, gamma_st, time_st)
def test_s_inv_inverts_tau(eps, gamma, t):
    s = _schedule(eps, gamma)
    assert s.s_inv(s.tau(t)) == pytest.approx(t, rel=1e-9, abs=1e-12)


def test_tau_small_time_is_stable():
    s = _schedule(0.1, 0.2)
    assert s.tau(1e-300) == pytest.approx(1e-300 / s.V(0.0), rel=1e-12)


@given(gamma_st, st.floats(min_value=0.0, max_value=100.0))
def test_z_independent_of_epsilon(gamma, t):
    zs = [ScalingSchedule(e, gamma, 0.9).z(t) for e in (0.01, 0.2, 1.0)]
    assert zs[0] == zs[1] == zs[2]
    ell = ScalingSchedule(0.2, gamma, 0.9).ell(t)
    assert ell == pytest.approx(0.2 ** (2 / gamma) * zs[0], rel=1e-14)


def test_identity_b1_gives_unit_scale():
    for eps, g in ((0.05, 0.2), (0.5, 1.0), (1.0, 0.3)):
        assert _schedule(eps, g).V(0.0) == pytest.approx(1.0, rel=1e-12)


def test_rescale_round_trip():
    s = _schedule(0.2, 0.2)
    v = np.random.default_rng(0).normal(size=(50, 3))
    w, tau = sc.rescale_velocities(v, s, 3.7)
    back, t = sc.unrescale_velocities(w, s, tau)
    assert t == pytest.approx(3.7, rel=1e-12)
    assert np.allclose(back, v, rtol=1e-12)


def test_haff_envelope_decay_exponent():
    s = ScalingSchedule(0.3, 0.2, 0.9)
    t = np.array([1e12, 1e14])
    lo, hi = s.haff_envelope(t)
    slope = np.diff(np.log(lo)) / np.diff(np.log(t))
    assert slope[0] == pytest.approx(-2 / 1.2, rel=1e-3)
    assert np.all(hi / lo == pytest.approx(25.0))


def test_physical_temperature_of_fixed_profile_lies_in_envelope():
    # a rescaled Maxwellian at theta_star = 1 has physical temperature 3 / V^2
    s = ScalingSchedule(0.3, 0.2, 0.9)
    t = np.geomspace(1e-2, 1e12, 40)
    temp = 3.0 / s.V(t) ** 2
    lo, hi = s.haff_envelope(t)
    assert np.all((lo <= temp) & (temp <= hi))


def test_table_columns():
    tab = ScalingSchedule(0.5, 0.2, 0.9).table(0.0, 10.0, 11)
    assert set(tab) == {"t", "V", "tau", "xi", "ell", "z"}
    assert np.all(np.diff(tab["tau"]) > 0) and np.all(np.diff(tab["ell"]) < 0)


def test_bad_inputs():
    with pytest.raises(DomainError):
        ScalingSchedule(0.0, 0.2, 0.9)
    with pytest.raises(DomainError):
        ScalingSchedule(1.5, 0.2, 0.9)
    with pytest.raises(DomainError):
        ScalingSchedule(0.5, 0.2, 0.9).V(-1.0)
    with pytest.raises(DomainError):
        ScalingSchedule(0.5, 0.2, 0.9).table(1.0, 0.0, 5)
