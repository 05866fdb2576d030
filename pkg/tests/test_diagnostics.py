import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from granular import diagnostics as dg
from granular import dissipation as dis
from granular import dsmc
from granular import restitution as rst
from granular.errors import DomainError
from granular.scaling import ScalingSchedule


@given(st.floats(0.2, 5.0))
@settings(max_examples=20, deadline=None)
def test_gram_is_identity(theta):
    assert np.abs(dg.ProjectionBasis(theta).gram() - np.eye(5)).max() < 1e-12


def test_pi0_of_perturbed_maxwellian():
    basis = dg.ProjectionBasis(1.0)
    delta = 0.03
    c = dg.pi0_from_function(lambda v: 1.0 + delta * (np.sum(v * v, axis=-1) - 3.0) / math.sqrt(6.0), basis)
    assert np.allclose(c, [1, 0, 0, 0, delta], atol=1e-13)
    shifted = dg.pi0_from_function(lambda v: 1.0 + 0.1 * v[..., 0], basis)
    assert np.allclose(shifted, [1, 0.1, 0, 0, 0], atol=1e-13)


def test_pi0_project_sample_and_projectors():
    ens = dsmc.init_maxwellian(100_000, seed=3, space_dim=1)
    basis = dg.ProjectionBasis(1.0)
    glob = dg.pi0_project(ens.velocities, basis)
    assert np.allclose(glob[0], [1, 0, 0, 0, 0], atol=1e-12)
    cells = dg.pi0_project(ens.velocities, basis, ens.positions, 4)
    assert cells.shape == (4, 5)
    assert np.allclose(cells.sum(axis=0), glob[0], atol=1e-12)
    assert np.allclose(dg.P0(cells), glob[0] / 4, atol=1e-12)
    assert dg.Pi0(cells).shape == (4,)


def test_macro_fields_uniform_gas():
    ens = dsmc.init_maxwellian(64_000, seed=1, space_dim=2)
    m = dg.macro_from_particles(ens, cells_per_dim=4)
    assert m.rho.shape == (16,) and m.valid.all()
    assert m.mass == pytest.approx(1.0, rel=1e-14)
    assert np.abs(m.momentum).max() < 1e-13
    assert m.temperature == pytest.approx(3.0, rel=1e-13)
    assert m.E_global == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.abs(m.rho - 1) < 0.15)
    assert np.all(m.T_central <= m.T + 1e-15)


def test_macro_fields_empty_cells_flagged():
    ens = dsmc.ParticleEnsemble(np.eye(3)[:2] * 1.0, positions=np.array([[0.1], [0.15]]))
    m = dg.macro_from_particles(ens, cells_per_dim=4)
    assert m.valid.tolist() == [True, False, False, False]
    assert m.rho[0] == pytest.approx(4.0)


def test_haff_oracle_matches_ode_solution():
    e0 = 0.9
    # the rate constant from the quadrature, independent of the closed form in the oracle
    c = dis.maxwellian_dissipation_D(rst.constant(e0), 1.0) / 3.0 ** 1.5
    t_eval = np.geomspace(1e-2, 1e3, 30)
    sol = solve_ivp(lambda t, y: -c * y ** 1.5, (0, 1e3), [3.0], t_eval=t_eval, rtol=1e-12, atol=1e-14)
    assert np.allclose(dg.haff_oracle(t_eval, e0), sol.y[0], rtol=1e-8)
    assert dg.haff_rate(e0) == pytest.approx(0.08252, abs=1e-4)
    th = dg.haff_time_shift(e0)
    assert np.allclose(dg.haff_oracle(t_eval, e0), 3.0 * (th / (t_eval + th)) ** 2, rtol=1e-13)


@given(st.floats(-3.0, -0.5), st.floats(0.1, 10.0))
@settings(max_examples=20, deadline=None)
def test_haff_fit_exact_power_law(slope, amp):
    t = np.geomspace(1.0, 1e4, 80)
    fit = dg.haff_fit(t, amp * t ** slope, resamples=50)
    assert fit.slope == pytest.approx(slope, abs=1e-10)
    assert fit.ci_low <= fit.slope + 1e-9 and fit.slope - 1e-9 <= fit.ci_high
    assert fit.n_points == 40


def test_haff_fit_offset_and_json():
    e0 = 0.9
    t = np.linspace(0, 500, 400)
    th = dg.haff_time_shift(e0)
    fit = dg.haff_fit(t, dg.haff_oracle(t, e0), t_min=th, offset=th)
    assert fit.slope == pytest.approx(-2.0, abs=1e-10)
    plain = dg.haff_fit(t, dg.haff_oracle(t, e0), t_min=th)
    assert plain.slope > -2.0
    data = json.loads(fit.to_json())
    assert set(data) == {"slope", "ci_low", "ci_high", "n_points", "tail_fraction"}


def test_haff_fit_guards():
    t = np.linspace(1, 10, 30)
    with pytest.raises(DomainError):
        dg.haff_fit(t, np.ones(30))
    with pytest.raises(DomainError):
        dg.haff_fit(t, -np.ones(30), tail_fraction=1.0)
    with pytest.raises(DomainError):
        dg.haff_fit(t, np.ones(29))


def test_fluctuation_trend():
    assert dg.fluctuation_trend(1.0 / (1.0 + np.arange(50))) == pytest.approx(-1.0)
    assert dg.fluctuation_trend([0.0, 0.0]) == 0.0


def test_balance_residuals_exact_for_smooth_solution():
    sch = ScalingSchedule(0.5, 0.2, 0.9)
    t = np.linspace(0.0, 2.0, 2001)
    temp = 3.0 * np.exp(2.0 * np.array([float(sch.xi_integral(0.0, s)) for s in t]))
    mom = np.zeros((t.size, 3))
    res = dg.moment_balance_residuals(t, np.ones(t.size), mom, temp, schedule=sch)
    assert np.abs(res.energy / temp[1:]).max() < 1e-5
    assert np.all(res.mass == 0) and np.all(res.momentum == 0)


def test_balance_ledger_from_rescaled_run():
    sch = ScalingSchedule(0.4, 0.2, dis.kinetic_constants(rst.viscoelastic()).a1)
    cfg = dsmc.DsmcConfig(n_particles=3000, mode="rescaled", schedule=sch, seed=2, t_end=0.2,
                          dt=0.01, output_interval=0.01)
    s = dsmc.run(cfg)
    res = dg.moment_balance_residuals(s.times, np.ones(s.times.size), s.momentum, s.temperatures, sch,
                                      collision_ledger=s.energy_ledger, stretch_ledger=s.stretch_ledger)
    assert np.abs(res.ledger).max() < 1e-10


def test_balance_guards():
    with pytest.raises(DomainError):
        dg.moment_balance_residuals([0.0], [1.0], [[0, 0, 0]], [3.0])
    with pytest.raises(DomainError):
        dg.moment_balance_residuals([0.0, 1.0, 1.0], np.ones(3), np.zeros((3, 3)), np.ones(3))
