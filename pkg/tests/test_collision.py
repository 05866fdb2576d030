import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from granular import collision as col
from granular import restitution as rst
from granular.errors import DomainError

ELASTIC = rst.constant(1.0)
HALF = rst.constant(0.5)
VISCO = rst.viscoelastic(1.0)

vec = arrays(np.float64, 3, elements=st.floats(-50, 50, allow_nan=False, allow_infinity=False))


def _unit(x):
    return x / np.linalg.norm(x)


def test_head_on_elastic():
    out = col.post_collision_n([1, 0, 0], [-1, 0, 0], [1, 0, 0], ELASTIC)
    assert np.array_equal(out.v_prime, [-1, 0, 0])
    assert np.array_equal(out.vstar_prime, [1, 0, 0])
    assert out.energy_change == 0


def test_head_on_half():
    out = col.post_collision_n([1, 0, 0], [-1, 0, 0], [1, 0, 0], HALF)
    assert np.allclose(out.v_prime, [-0.5, 0, 0], atol=1e-15)
    assert np.allclose(out.vstar_prime, [0.5, 0, 0], atol=1e-15)
    assert out.energy_change == pytest.approx(-1.5)


def test_grazing_is_noop():
    out = col.post_collision_n([1, 0, 0], [-1, 0, 0], [0, 1, 0], VISCO)
    assert np.array_equal(out.v_prime, [1, 0, 0]) and np.array_equal(out.vstar_prime, [-1, 0, 0])
    assert out.energy_change == 0


def test_sigma_equal_u_hat_is_noop():
    v, vs = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 0.0])
    u_hat = _unit(v - vs)
    out = col.post_collision_sigma(v, vs, u_hat, VISCO)
    assert np.allclose(out.v_prime, v, atol=1e-14) and np.allclose(out.vstar_prime, vs, atol=1e-14)


def test_sigma_reverse_elastic_exchange():
    v, vs = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 0.0])
    out = col.post_collision_sigma(v, vs, -_unit(v - vs), ELASTIC)
    assert np.allclose(out.v_prime, vs, atol=1e-14) and np.allclose(out.vstar_prime, v, atol=1e-14)


def test_sigma_degenerate_pair_raises():
    with pytest.raises(DomainError):
        col.post_collision_sigma([1, 1, 1], [1, 1, 1], [1, 0, 0], VISCO)


def test_non_unit_normal_raises():
    with pytest.raises(DomainError):
        col.post_collision_n([1, 0, 0], [0, 0, 0], [2, 0, 0], VISCO)


def test_sigma_and_n_forms_agree():
    rng = np.random.default_rng(11)
    v = rng.normal(size=(1000, 3))
    vs = rng.normal(size=(1000, 3))
    n = col.random_unit_vectors(rng, 1000)
    u_hat = (v - vs) / np.linalg.norm(v - vs, axis=1, keepdims=True)
    sigma = col.sigma_from_normal(u_hat, n)
    a = col.post_collision_n(v, vs, n, VISCO)
    b = col.post_collision_sigma(v, vs, sigma, VISCO)
    assert np.allclose(a.v_prime, b.v_prime, atol=1e-12)
    assert np.allclose(a.vstar_prime, b.vstar_prime, atol=1e-12)


def test_pre_collision_examples():
    pv, pvs = col.pre_collision([-0.5, 0, 0], [0.5, 0, 0], [1, 0, 0], HALF)
    assert np.allclose(pv, [1, 0, 0]) and np.allclose(pvs, [-1, 0, 0])
    v, vs = np.array([0.3, -1.0, 2.0]), np.array([1.0, 1.0, -1.0])
    n = _unit(np.array([1.0, 2.0, -0.5]))
    el = col.post_collision_n(v, vs, n, ELASTIC)
    pv, pvs = col.pre_collision(v, vs, n, ELASTIC)
    assert np.allclose(pv, el.v_prime, atol=1e-14) and np.allclose(pvs, el.vstar_prime, atol=1e-14)
    pv, pvs = col.pre_collision(v, vs, _unit(np.cross(v - vs, [0, 0, 1.0])), VISCO)
    assert np.allclose(pv, v, atol=1e-14) and np.allclose(pvs, vs, atol=1e-14)


@given(vec, vec, vec)
def test_momentum_exact(v, vs, nraw):
    if np.linalg.norm(nraw) < 1e-3:
        return
    out = col.post_collision_n(v, vs, _unit(nraw), VISCO)
    # v' + v*' = (v - d) + (v* + d) to within the rounding of each term
    size = np.abs(v) + np.abs(vs) + np.abs(out.v_prime) + np.abs(out.vstar_prime)
    tol = 4 * np.spacing(size + 1e-300)
    assert np.all(np.abs(out.v_prime + out.vstar_prime - (v + vs)) <= tol)


@given(vec, vec, vec)
def test_energy_change_nonpositive(v, vs, nraw):
    if np.linalg.norm(nraw) < 1e-3:
        return
    out = col.post_collision_n(v, vs, _unit(nraw), VISCO)
    assert out.energy_change <= 0


@settings(max_examples=50)
@given(vec, vec, vec)
def test_elastic_involution(v, vs, nraw):
    if np.linalg.norm(nraw) < 1e-3:
        return
    n = _unit(nraw)
    once = col.post_collision_n(v, vs, n, ELASTIC)
    twice = col.post_collision_n(once.v_prime, once.vstar_prime, n, ELASTIC)
    scale = 1.0 + np.abs(v).max() + np.abs(vs).max()
    assert np.allclose(twice.v_prime, v, atol=1e-12 * scale)
    assert np.allclose(twice.vstar_prime, vs, atol=1e-12 * scale)


def test_pre_post_round_trip_random():
    rng = np.random.default_rng(5)
    v = rng.normal(size=(10_000, 3)) * 3
    vs = rng.normal(size=(10_000, 3)) * 3
    n = col.random_unit_vectors(rng, 10_000)
    out = col.post_collision_n(v, vs, n, VISCO)
    pv, pvs = col.pre_collision(out.v_prime, out.vstar_prime, n, VISCO)
    assert np.abs(pv - v).max() < 1e-8 and np.abs(pvs - vs).max() < 1e-8


def test_hard_sphere_second_moment():
    rng = np.random.default_rng(2)
    u_hat = np.tile([0.0, 0.0, 1.0], (1_000_000, 1))
    s = np.sum(col.sample_direction(col.hard_sphere(), u_hat, rng) * u_hat, axis=1)
    x = s * s
    assert abs(x.mean() - 0.5) < 3 * x.std() / math.sqrt(x.size)
    assert np.all(s >= 0)


def test_isotropic_mean_zero_and_custom_matches():
    rng = np.random.default_rng(3)
    u_hat = np.tile(_unit(np.array([1.0, 1.0, 0.0])), (200_000, 1))
    s_iso = np.sum(col.sample_direction(col.isotropic(), u_hat, rng) * u_hat, axis=1)
    assert abs(s_iso.mean()) < 3 * s_iso.std() / math.sqrt(s_iso.size)
    flat = col.custom_kernel(lambda c: np.full(np.shape(c), 1.0 / (4.0 * np.pi)))
    s_c = np.sum(col.sample_direction(flat, u_hat, rng) * u_hat, axis=1)
    se = math.sqrt(s_iso.var() / s_iso.size + s_c.var() / s_c.size)
    assert abs(np.mean(s_c ** 2) - np.mean(s_iso ** 2)) < 5 * se
    assert abs(s_c.mean()) < 3 * s_c.std() / math.sqrt(s_c.size)


def test_kernel_normalization():
    for k in (col.hard_sphere(), col.isotropic()):
        assert k.normalization() == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(DomainError):
        col.custom_kernel(lambda c: np.ones(np.shape(c)))


def test_energy_identity_batch_ulps():
    rng = np.random.default_rng(8)
    v = rng.normal(size=(100_000, 3))
    vs = rng.normal(size=(100_000, 3))
    n = col.random_unit_vectors(rng, 100_000)
    out = col.post_collision_n(v, vs, n, VISCO)
    e_before = np.sum(v * v, axis=1) + np.sum(vs * vs, axis=1)
    e_after = np.sum(out.v_prime ** 2, axis=1) + np.sum(out.vstar_prime ** 2, axis=1)
    err = np.abs((e_after - e_before) - out.energy_change) / np.spacing(e_before)
    assert err.max() <= 4
