"""Binary inelastic collisions in the normal and sigma parametrizations.

Both particles receive the same momentum transfer ``d``, evaluated once:
``v' = v - d`` and ``v*' = v* + d``. The transfer and the normal component
of the relative velocity are formed in extended precision and rounded once,
so the kinetic-energy identity holds to a few units of the pair energy's
last place even over long cooling runs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from granular import restitution as rst
from granular.errors import DomainError, InvariantViolation

UNIT_TOL = 1e-12
NORMALIZATION_TOL = 1e-8
# extended precision for the momentum transfer; falls back to double where unavailable
_XP = np.longdouble


@dataclass(frozen=True)
class CollisionOutcome:
    v_prime: np.ndarray
    vstar_prime: np.ndarray
    impact_speed: np.ndarray
    e_used: np.ndarray
    energy_change: np.ndarray


def _check_unit(n: np.ndarray, name: str) -> None:
    norms = np.linalg.norm(n, axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise DomainError(f"{name} must be a unit vector")


def _restitution(model, speed, ell):
    if ell == 1.0:
        return np.asarray(rst.evaluate(model, speed), dtype=float)
    return np.asarray(rst.evaluate_rescaled(model, ell, speed), dtype=float)


def post_collision_n(v, vstar, n, model, ell: float = 1.0) -> CollisionOutcome:
    """Post-collision velocities for unit normal ``n``; arrays broadcast over leading axes."""
    v = np.asarray(v, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    n = np.asarray(n, dtype=float)
    _check_unit(n, "n")
    u = v.astype(_XP) - vstar.astype(_XP)
    nx = n.astype(_XP)
    nn = np.sum(nx * nx, axis=-1)
    # reflect along n exactly as represented, so |n| != 1 in the last bit costs nothing
    un = np.sum(u * nx, axis=-1) / np.sqrt(nn)
    speed = np.abs(un).astype(float)
    e = _restitution(model, speed, ell)
    d = ((0.5 * (1.0 + e.astype(_XP)) * un) / np.sqrt(nn))[..., None] * nx
    return _apply(v, vstar, d, e, un * un, speed)


def post_collision_sigma(v, vstar, sigma, model, ell: float = 1.0) -> CollisionOutcome:
    """Post-collision velocities for the outgoing relative direction ``sigma``."""
    v = np.asarray(v, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    _check_unit(sigma, "sigma")
    u = v - vstar
    if np.any(np.all(u == 0, axis=-1)):
        raise DomainError("degenerate pair: relative velocity is zero")
    return _sigma_update(v, vstar, sigma, model, ell)


def _sigma_update(v, vstar, sigma, model, ell):
    u = v.astype(_XP) - vstar.astype(_XP)
    sx = sigma.astype(_XP)
    # scale sigma to length |u| exactly as represented, so that u.w = |w|^2 / 2
    m = np.sqrt(np.sum(u * u, axis=-1) / np.sum(sx * sx, axis=-1))
    w = u - m[..., None] * sx
    # (u.n)^2 = |w|^2 / 4
    s2 = 0.25 * np.sum(w * w, axis=-1)
    speed = np.sqrt(s2).astype(float)
    e = _restitution(model, speed, ell)
    d = (0.25 * (1.0 + e.astype(_XP)))[..., None] * w
    return _apply(v, vstar, d, e, s2, speed)


def _apply(v, vstar, d, e, un2, speed) -> CollisionOutcome:
    v_new = (v - d).astype(float)
    vs_new = (vstar + d).astype(float)
    ex = e.astype(_XP)
    de = (-0.5 * (1.0 - ex * ex) * un2).astype(float)
    return CollisionOutcome(v_new, vs_new, speed, e, de)


def sigma_from_normal(u_hat, n):
    u_hat = np.asarray(u_hat, dtype=float)
    n = np.asarray(n, dtype=float)
    return u_hat - 2.0 * np.sum(u_hat * n, axis=-1)[..., None] * n


def pre_collision(v, vstar, n, model, ell: float = 1.0):
    """Velocities that collide with normal ``n`` into ``(v, vstar)``."""
    v = np.asarray(v, dtype=float)
    vstar = np.asarray(vstar, dtype=float)
    n = np.asarray(n, dtype=float)
    _check_unit(n, "n")
    u = v.astype(_XP) - vstar.astype(_XP)
    un = np.sum(u * n, axis=-1)
    # pre-collision normal speed r solves r e(ell r) = |u.n|, i.e. r = eta^-1(ell |u.n|) / ell
    r = np.asarray(rst.eta_inverse(model, ell * np.abs(un).astype(float)), dtype=float) / ell
    if not np.all(np.isfinite(r)):
        raise InvariantViolation("pre-collision normal speed is not finite")
    un_pre = -np.sign(un) * r
    d = (0.5 * (un_pre - un))[..., None] * n
    return (v + d).astype(float), (vstar - d).astype(float)


def random_unit_vectors(rng: np.random.Generator, size: int) -> np.ndarray:
    z = rng.uniform(-1.0, 1.0, size)
    phi = rng.uniform(0.0, 2.0 * np.pi, size)
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=-1)


def _orthonormal_frame(u_hat: np.ndarray):
    """Two unit vectors orthogonal to each row of ``u_hat`` and to each other."""
    helper = np.zeros_like(u_hat)
    use_x = np.abs(u_hat[..., 0]) < 0.9
    helper[use_x, 0] = 1.0
    helper[~use_x, 1] = 1.0
    a = np.cross(u_hat, helper)
    a /= np.linalg.norm(a, axis=-1, keepdims=True)
    b = np.cross(u_hat, a)
    return a, b


def _normal_from_sigma(u_hat, sigma):
    d = u_hat - sigma
    norm = np.linalg.norm(d, axis=-1, keepdims=True)
    # sigma == u_hat has no defined normal; any unit vector orthogonal to u_hat works
    a, _ = _orthonormal_frame(u_hat)
    return np.where(norm > 0, d / np.where(norm > 0, norm, 1.0), a)


@dataclass(frozen=True)
class AngularKernel:
    """Scattering law.

    ``b`` is the density of the outgoing direction sigma with respect to the
    surface measure, as a function of ``cos = u_hat . sigma``; it integrates to
    one over the sphere. Hard spheres and the isotropic law share ``b = 1/(4 pi)``;
    they differ only in the sign convention of the sampled normal.
    """

    kind: str
    b: Optional[Callable[[np.ndarray], np.ndarray]] = None
    b_max: float = 1.0 / (4.0 * np.pi)

    def density(self, cos) -> np.ndarray:
        cos = np.asarray(cos, dtype=float)
        if self.kind in ("hard_sphere", "isotropic"):
            return np.full(cos.shape, 1.0 / (4.0 * np.pi))
        return np.asarray(self.b(cos), dtype=float)

    def normalization(self) -> float:
        """``2 pi * int_{-1}^{1} b(c) dc`` via composite Gauss-Legendre."""
        x, w = np.polynomial.legendre.leggauss(64)
        edges = np.linspace(-1.0, 1.0, 65)
        mid = 0.5 * (edges[1:] + edges[:-1])[:, None]
        half = 0.5 * (edges[1:] - edges[:-1])[:, None]
        nodes = mid + half * x
        return float(2.0 * np.pi * np.sum(half * w * self.density(nodes)))


def hard_sphere() -> AngularKernel:
    return AngularKernel("hard_sphere")


def isotropic() -> AngularKernel:
    return AngularKernel("isotropic")


def custom_kernel(b, b_max: Optional[float] = None) -> AngularKernel:
    """Kernel with sigma-density ``b(cos)``; ``b_max`` bounds it for rejection sampling."""
    if b_max is None:
        grid = np.linspace(-1.0, 1.0, 20001)
        b_max = float(np.max(np.asarray(b(grid), dtype=float))) * (1.0 + 1e-6)
    kernel = AngularKernel("custom", b=b, b_max=float(b_max))
    norm = kernel.normalization()
    if abs(norm - 1.0) > NORMALIZATION_TOL:
        raise DomainError(f"kernel must integrate to one over the sphere, got {norm:.12g}")
    return kernel


def kernel_from_name(name: str) -> AngularKernel:
    table = {"hard_sphere": hard_sphere, "isotropic": isotropic}
    if name not in table:
        raise DomainError(f"unknown kernel {name!r}")
    return table[name]()


def sample_sigma(kernel: AngularKernel, u_hat, rng: np.random.Generator) -> np.ndarray:
    """Outgoing directions sigma distributed with density ``b(u_hat . sigma)``."""
    u_hat = np.atleast_2d(np.asarray(u_hat, dtype=float))
    m = u_hat.shape[0]
    if kernel.kind in ("hard_sphere", "isotropic"):
        return random_unit_vectors(rng, m)
    out = np.empty_like(u_hat)
    pending = np.arange(m)
    while pending.size:
        cand = random_unit_vectors(rng, pending.size)
        cos = np.sum(cand * u_hat[pending], axis=-1)
        keep = rng.random(pending.size) * kernel.b_max < kernel.density(cos)
        out[pending[keep]] = cand[keep]
        pending = pending[~keep]
    return out


def sample_direction(kernel: AngularKernel, u_hat, rng: np.random.Generator) -> np.ndarray:
    """Collision normals ``n`` for relative directions ``u_hat`` (rows).

    Hard-sphere normals lie on the hemisphere ``u_hat . n >= 0`` with
    ``s = u_hat . n`` of density ``2 s``. The isotropic and custom samplers
    return the same geometric normal with a random sign.
    """
    u_hat = np.asarray(u_hat, dtype=float)
    squeeze = u_hat.ndim == 1
    u2 = np.atleast_2d(u_hat)
    _check_unit(u2, "u_hat")
    if kernel.kind == "hard_sphere":
        s = np.sqrt(rng.random(u2.shape[0]))
        phi = rng.uniform(0.0, 2.0 * np.pi, u2.shape[0])
        a, b = _orthonormal_frame(u2)
        t = np.sqrt(np.maximum(0.0, 1.0 - s * s))
        n = s[:, None] * u2 + (t * np.cos(phi))[:, None] * a + (t * np.sin(phi))[:, None] * b
    else:
        sigma = sample_sigma(kernel, u2, rng)
        n = _normal_from_sigma(u2, sigma)
        sign = np.where(rng.random(u2.shape[0]) < 0.5, -1.0, 1.0)
        n = n * sign[:, None]
    return n[0] if squeeze else n
