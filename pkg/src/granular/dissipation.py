"""Dissipation functionals, Gaussian moments and the constants built on them.

Every double-Maxwellian integral is reduced to a one-dimensional radial
integral before quadrature. For a Maxwellian of temperature ``theta`` the
relative velocity is Gaussian with variance ``2 theta`` per component, so
averages of functions of ``|u|`` become ``int M(y) g(sqrt(2 theta) |y|) dy``
and then ``sqrt(2/pi) int rho^2 exp(-rho^2/2) g(.) d rho``.

Quantities that vanish like ``ell^gamma`` as the scale ``ell`` goes to zero
are computed directly in scaled form from the scaled deficit
``(1 - e(ell r)) / ell^gamma``, so no precision is lost at tiny ``ell``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma as gamma_fn

from granular import restitution as rst
from granular.collision import hard_sphere, sample_direction
from granular.errors import DomainError
from granular.quadrature import DEFAULT, QuadratureConfig, integrate

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _power(model: rst.RestitutionModel) -> float:
    return model.gamma if model.gamma is not None else 0.0


def _substitution(model: rst.RestitutionModel) -> float:
    # z = w^p turns (1 - e(c z)) ~ z^gamma into a smooth function of w
    return 1.0 / model.gamma if model.gamma else 1.0


def _one_minus_e2_scaled(model, ell, r):
    """``(1 - e(ell r)^2) / ell^power`` with power = gamma for class models, else 0."""
    if model.gamma is None:
        d = np.asarray(rst.deficit(model, ell * r))
        return d * (2.0 - d)
    d = np.asarray(rst.scaled_deficit(model, ell, r))
    return d * (2.0 - ell ** model.gamma * d)


def _psi_core(model, ell, R, cfg: QuadratureConfig = DEFAULT):
    """``ell^(-3-power) Psi(ell^2 R^2)`` for an array of ``R``."""
    R = np.atleast_1d(np.asarray(R, dtype=float))
    if model.is_elastic:
        return np.zeros_like(R)
    p = _substitution(model)

    def f(w):
        z = w ** p
        vals = _one_minus_e2_scaled(model, ell, R[:, None] * z[None, :])
        return vals * p * w ** (4.0 * p - 1.0)

    inner = integrate(f, 0.0, 1.0, cfg).value
    return 0.5 * R ** 3 * inner


def psi(model: rst.RestitutionModel, r, cfg: QuadratureConfig = DEFAULT):
    """``Psi(r) = (r^(3/2)/2) int_0^1 (1 - e(sqrt(r) z)^2) z^3 dz``."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("psi needs r >= 0")
    out = _psi_core(model, 1.0, np.sqrt(r.ravel()), cfg).reshape(r.shape)
    return float(out) if out.ndim == 0 else out


def psi_rescaled(model, ell: float, r, cfg: QuadratureConfig = DEFAULT):
    """Dissipation function of the rescaled coefficient ``e(ell .)`` at ``r``."""
    if not ell > 0:
        raise DomainError("scale must be positive")
    r = np.asarray(r, dtype=float)
    # ell^(-3-power) Psi_e(ell^2 r) = ell^(-power) Psi_{e_ell}(r)
    core = _psi_core(model, ell, np.sqrt(r.ravel()), cfg).reshape(r.shape)
    out = core * ell ** _power(model)
    return float(out) if out.ndim == 0 else out


def _radial(g, cfg: QuadratureConfig = DEFAULT):
    """``int M(y) g(|y|) dy`` in three dimensions; ``g`` maps rho nodes to values."""
    res = integrate(lambda rho: rho ** 2 * np.exp(-0.5 * rho ** 2) * g(rho), 0.0, cfg.radial_cutoff, cfg)
    return SQRT_2_OVER_PI * res.value, SQRT_2_OVER_PI * res.error


def moment_K(s: float, cfg: QuadratureConfig = DEFAULT) -> float:
    """``K_s = int M |v|^(3+s) dv`` by radial quadrature."""
    if not s > -3:
        raise DomainError("K_s needs s > -3")
    return float(_radial(lambda rho: rho ** (3.0 + s), cfg)[0])


def moment_K_closed(s: float) -> float:
    # int_0^inf r^k exp(-r^2/2) dr = 2^((k-1)/2) Gamma((k+1)/2) with k = 5 + s
    return SQRT_2_OVER_PI * 2.0 ** ((4.0 + s) / 2.0) * float(gamma_fn((6.0 + s) / 2.0))


def gaussian_sign_integral(alpha: float, d: int = 3, cfg: QuadratureConfig = DEFAULT) -> float:
    """``I(alpha) = int M |x|^(3+alpha) (|x|^2 - (d+2)) dx`` for the standard Gaussian in R^d."""
    if d < 1:
        raise DomainError("dimension must be at least 1")
    p = d - 1 + 3.0 + alpha  # radial exponent of the integrand near zero
    if not p > -1.0:
        raise DomainError("integrability requires 3 + alpha > -d")
    const = 2.0 ** (1.0 - d / 2.0) / float(gamma_fn(d / 2.0))  # |S^(d-1)| / (2 pi)^(d/2)
    # rho = t^q makes rho^p d rho = q t^(q(p+1)-1) dt smooth at the origin
    q = 2.0 / (p + 1.0) if p < 2.0 else 1.0
    top = cfg.radial_cutoff ** (1.0 / q)

    def f(t):
        rho = t ** q
        return q * t ** (q * (p + 1.0) - 1.0) * np.exp(-0.5 * rho ** 2) * (rho ** 2 - (d + 2.0))

    return float(const * integrate(f, 0.0, top, cfg).value)


def gaussian_sign_integral_closed(alpha: float, d: int = 3) -> float:
    m = d + 2.0 + alpha
    const = 2.0 ** (1.0 - d / 2.0) / float(gamma_fn(d / 2.0))
    return const * 2.0 ** ((m - 1.0) / 2.0) * float(gamma_fn((m + 1.0) / 2.0)) * (alpha + 1.0)


@dataclass(frozen=True)
class KineticConstants:
    gamma: float
    gamma_bar: float
    a0: float
    theta_star: float
    a1: float
    a2: float
    K: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.a2 / self.a1


def kinetic_constants(model: rst.RestitutionModel, theta_star: float = 1.0,
                      cfg: QuadratureConfig = DEFAULT) -> KineticConstants:
    """The dissipation constant ``a1`` and the rate constant ``a2``, each from its own formula."""
    if model.gamma is None:
        raise DomainError("kinetic constants need a restitution model with a declared gamma")
    if not theta_star > 0:
        raise DomainError("theta_star must be positive")
    g, a0, th = model.gamma, model.a0, theta_star
    k_g = moment_K(g, cfg)
    k_g2 = moment_K(g + 2.0, cfg)
    a1 = a0 * k_g * (2.0 * th) ** ((1.0 + g) / 2.0) / (3.0 * (4.0 + g))
    a2 = (1.0 / (3.0 * th ** 2)) * (a0 * th / (2.0 * (4.0 + g))) * (2.0 * th) ** ((3.0 + g) / 2.0) * (k_g2 - 5.0 * k_g)
    return KineticConstants(g, model.gamma_bar, a0, th, a1, a2, {g: k_g, g + 2.0: k_g2})


def maxwellian_energy(theta_star: float = 1.0, cfg: QuadratureConfig = DEFAULT) -> float:
    """``int M |v|^2 dv`` for the Maxwellian of temperature ``theta_star`` (equals 3 theta_star)."""
    return theta_star * float(_radial(lambda rho: rho ** 2, cfg)[0])


def _scaled_flux(model, ell, theta_star, weight, cfg):
    """``ell^(-3-power) int M(y) weight(|y|) Psi(2 ell^2 theta |y|^2) dy``."""
    c = math.sqrt(2.0 * theta_star)
    return _radial(lambda rho: weight(rho) * _psi_core(model, ell, c * rho, cfg), cfg)[0]


def maxwellian_dissipation_D(model, ell: float, theta_star: float = 1.0,
                             cfg: QuadratureConfig = DEFAULT) -> float:
    """``D_ell = ell^(-3) int M(y) Psi(2 ell^2 theta |y|^2) dy``.

    At ``ell = 1`` this is the cooling rate ``-dT/dt`` of a Maxwellian gas with
    temperature parameter ``theta_star``.
    """
    if not ell > 0:
        raise DomainError("scale must be positive")
    core = _scaled_flux(model, ell, theta_star, lambda rho: 1.0, cfg)
    return float(core * ell ** _power(model))


def energy_flux_ratio(model, ell: float, theta_star: float = 1.0,
                      cfg: QuadratureConfig = DEFAULT) -> float:
    """``tau_ell = D_ell / (6 a1 ell^gamma theta)``, which tends to one as ``ell -> 0``."""
    k = kinetic_constants(model, theta_star, cfg)
    core = _scaled_flux(model, ell, theta_star, lambda rho: 1.0, cfg)
    return float(core / (6.0 * k.a1 * theta_star))


def j_functional(model, ell: float, theta_star: float = 1.0, cfg: QuadratureConfig = DEFAULT) -> float:
    """``J_ell = (theta / (2 ell^(3+gamma))) int (|y|^2 - 3) M(y) Psi(2 ell^2 theta |y|^2) dy``."""
    core = _scaled_flux(model, ell, theta_star, lambda rho: rho ** 2 - 3.0, cfg)
    return float(0.5 * theta_star * core)


def lambda_eps(model, schedule, t: float, cfg: QuadratureConfig = DEFAULT) -> float:
    """Dissipation rate ``lambda_eps(t) = z^gamma J_ell / (3 theta^2) - 2 xi(t)``.

    Here ``z^gamma = ell^gamma / eps^2`` with ``ell = ell_eps(t)``.
    """
    if t < 0:
        raise DomainError("time must be non-negative")
    th = schedule.theta_star
    xi = schedule.xi(t)
    if model.is_elastic:
        return -2.0 * xi
    ell = schedule.ell(t)
    j = j_functional(model, ell, th, cfg)
    return float(schedule.z(t) ** model.gamma * j / (3.0 * th ** 2) - 2.0 * xi)


@dataclass(frozen=True)
class QmmEstimate:
    norm: float
    std_error: float
    squared: float
    squared_std_error: float
    samples: int
    rejected: int

    @property
    def rejected_fraction(self) -> float:
        return self.rejected / max(1, self.samples)


def _g_integrand(model, ell, theta_star, v, vstar, n):
    """``|u| * G_ell(v, v*, n) / 2`` for sampled hard-sphere normals, plus rejection mask."""
    u = v - vstar
    umag = np.linalg.norm(u, axis=-1)
    un = np.abs(np.sum(u * n, axis=-1))
    # pre-collision normal speed at scale ell: w solves w e(ell w) = |u.n|
    w = np.asarray(rst.eta_inverse(model, ell * un)) / ell
    e = np.asarray(rst.evaluate(model, ell * w))
    jac = np.asarray(rst.jacobian(model, ell * w))
    one_minus_e2 = _one_minus_e2(model, ell * w)
    bad = e * jac < 1e-14
    gval = np.exp(-one_minus_e2 * w * w / (4.0 * theta_star)) / np.where(bad, 1.0, e * jac) - 1.0
    # int over the sphere of b0(u_hat . n) dn equals 1/2 for hard spheres
    return np.where(bad, 0.0, 0.5 * umag * gval), bad


def _one_minus_e2(model, r):
    d = np.asarray(rst.deficit(model, r))
    return d * (2.0 - d)


def q_mm_weighted_norm(model, ell: float, mc_samples: int = 100_000, rng=None,
                       theta_star: float = 1.0, inner: int = 16, chunk: int = 20_000) -> QmmEstimate:
    """Monte Carlo estimate of ``||Q_{e_ell}(M, M)||`` in ``L^2(M^(-1/2))``.

    With ``Q(M,M) = M g`` the squared norm is ``E_v[g(v)^2]`` for ``v ~ M``.
    For each outer sample ``v`` the inner expectation over ``(v*, n)`` is
    estimated from ``inner`` draws and ``g(v)^2`` by the unbiased U-statistic
    ``((sum X)^2 - sum X^2) / (k (k - 1))``.
    """
    if not 0 < ell <= 1:
        raise DomainError("scale must lie in (0, 1]")
    if mc_samples < 100_000:
        raise DomainError("at least 1e5 outer samples are required")
    if inner < 2:
        raise DomainError("need at least two inner samples")
    rng = np.random.default_rng(rng)
    kernel = hard_sphere()
    sd = math.sqrt(theta_star)
    sums = 0.0
    sums2 = 0.0
    rejected = 0
    done = 0
    while done < mc_samples:
        m = min(chunk, mc_samples - done)
        v = rng.normal(0.0, sd, (m, 1, 3))
        vstar = rng.normal(0.0, sd, (m, inner, 3))
        u = v - vstar
        umag = np.linalg.norm(u, axis=-1, keepdims=True)
        u_hat = (u / np.where(umag > 0, umag, 1.0)).reshape(-1, 3)
        n = sample_direction(kernel, u_hat, rng).reshape(m, inner, 3)
        x, bad = _g_integrand(model, ell, theta_star, np.broadcast_to(v, vstar.shape), vstar, n)
        rejected += int(bad.sum())
        s1 = x.sum(axis=1)
        s2 = (x * x).sum(axis=1)
        est = (s1 * s1 - s2) / (inner * (inner - 1))
        sums += float(est.sum())
        sums2 += float((est * est).sum())
        done += m
    mean = sums / mc_samples
    var = max(sums2 / mc_samples - mean * mean, 0.0)
    se = math.sqrt(var / mc_samples)
    norm = math.sqrt(max(mean, 0.0))
    norm_se = se / (2.0 * norm) if norm > 0 else math.sqrt(se)
    return QmmEstimate(norm, norm_se, mean, se, mc_samples, rejected)
