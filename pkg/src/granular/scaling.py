"""Closed-form self-similar schedule linking physical and rescaled variables.

With ``A = (1 + gamma) a1 / eps^2`` and ``B = b1 eps^(-2 (1 + gamma) / gamma)``
the velocity scale is ``V(t) = (B + A t)^(1 / (1 + gamma))``, the rescaled time
is ``tau(t) = int_0^t ds / V(s)``, and the anti-drift coefficient in rescaled
time is ``xi = a1 / (b1^(gamma/(gamma+1)) + gamma a1 t)``, independent of eps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from granular.errors import DomainError


@dataclass(frozen=True)
class ScalingSchedule:
    epsilon: float
    gamma: float
    a1: float
    b1: float = 1.0
    theta_star: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise DomainError("epsilon must lie in (0, 1]")
        if not self.gamma > 0 or not self.a1 > 0 or not self.b1 > 0 or not self.theta_star > 0:
            raise DomainError("gamma, a1, b1 and theta_star must be positive")

    @property
    def a_eps(self) -> float:
        return (1.0 + self.gamma) * self.a1 / self.epsilon ** 2

    @property
    def b_eps(self) -> float:
        return self.b1 * self.epsilon ** (-2.0 * (1.0 + self.gamma) / self.gamma)

    @property
    def _kappa(self) -> float:
        return self.gamma / (self.gamma + 1.0)

    def V(self, t):
        """Velocity scale at physical time ``t``."""
        g = self.gamma
        t = _nonneg(t)
        return self.epsilon ** (-2.0 / g) * (self.b1 + (1.0 + g) * self.a1 * self.epsilon ** (2.0 / g) * t) ** (1.0 / (g + 1.0))

    def V_dot(self, t):
        g = self.gamma
        t = _nonneg(t)
        base = self.b1 + (1.0 + g) * self.a1 * self.epsilon ** (2.0 / g) * t
        return self.a1 * base ** (-g / (g + 1.0))

    def tau(self, t):
        """Rescaled time reached at physical time ``t``."""
        t = _nonneg(t)
        a, b, k = self.a_eps, self.b_eps, self._kappa
        # (b + a t)^k - b^k = b^k expm1(k log1p(a t / b)), stable for small t
        return (1.0 + self.gamma) / (self.gamma * a) * b ** k * np.expm1(k * np.log1p(a * t / b))

    def s_inv(self, t):
        """Physical time at which the rescaled clock reads ``t``."""
        t = _nonneg(t)
        a, b, k = self.a_eps, self.b_eps, self._kappa
        x = self.gamma * a * t / ((1.0 + self.gamma) * b ** k)
        return b / a * np.expm1(np.log1p(x) / k)

    def _denominator(self, t):
        return self.b1 ** self._kappa + self.gamma * self.a1 * _nonneg(t)

    def xi(self, t):
        return self.a1 / self._denominator(t)

    def xi_integral(self, t0, t1):
        """``int_t0^t1 xi`` in closed form."""
        d0, d1 = self._denominator(t0), self._denominator(t1)
        return np.log(d1 / d0) / self.gamma

    def z(self, t):
        return self._denominator(t) ** (-1.0 / self.gamma)

    def ell(self, t):
        return self.epsilon ** (2.0 / self.gamma) * self.z(t)

    def haff_envelope(self, t, c_low: float = 0.2, c_high: float = 5.0):
        """Bounds ``c * eps^(4/(g+1)) (eps^(-2/g) + t)^(-2/(g+1))`` for the physical temperature."""
        g = self.gamma
        base = self.epsilon ** (4.0 / (g + 1.0)) * (self.epsilon ** (-2.0 / g) + _nonneg(t)) ** (-2.0 / (g + 1.0))
        return c_low * base, c_high * base

    def table(self, t0: float, t1: float, points: int):
        """Columns ``t, V, tau, xi, ell, z`` on an even grid."""
        if points < 2 or t1 < t0:
            raise DomainError("need at least two points and t1 >= t0")
        t = np.linspace(t0, t1, points)
        return {"t": t, "V": self.V(t), "tau": self.tau(t), "xi": self.xi(t),
                "ell": self.ell(t), "z": self.z(t)}


def _nonneg(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("time must be non-negative")
    return float(t) if t.ndim == 0 else t


def identity_b1(epsilon: float, gamma: float) -> float:
    """``b1`` for which ``V(0) = 1``."""
    return epsilon ** (2.0 * (gamma + 1.0) / gamma)


def rescale_velocities(velocities, schedule: ScalingSchedule, t_phys: float):
    """Physical velocities at time ``t_phys`` mapped to rescaled ones, plus rescaled time."""
    return np.asarray(velocities, dtype=float) * schedule.V(t_phys), float(schedule.tau(t_phys))


def unrescale_velocities(velocities, schedule: ScalingSchedule, t_rescaled: float):
    """Inverse of :func:`rescale_velocities`; returns velocities and physical time."""
    t_phys = float(schedule.s_inv(t_rescaled))
    return np.asarray(velocities, dtype=float) / schedule.V(t_phys), t_phys


def stretch_factor(schedule: ScalingSchedule, t0: float, t1: float) -> float:
    return math.exp(float(schedule.xi_integral(t0, t1)))
