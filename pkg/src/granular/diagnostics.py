"""Macroscopic moments, projections onto the collision invariants, Haff fits
and moment-balance residuals."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from granular.errors import DomainError

GRAM_TOL = 1e-8


@dataclass
class MacroFields:
    rho: np.ndarray  # per cell, mean 1
    u: np.ndarray  # per cell bulk velocity, shape (cells, 3)
    T: np.ndarray  # raw second moment per cell
    T_central: np.ndarray  # second moment about the cell bulk velocity
    valid: np.ndarray  # False for empty cells
    E_global: float  # spatial mean of the temperature fluctuation T - 3 theta_star

    @property
    def mass(self) -> float:
        return float(np.mean(self.rho))

    @property
    def momentum(self) -> np.ndarray:
        return np.mean(self.rho[:, None] * self.u, axis=0)

    @property
    def temperature(self) -> float:
        return float(np.mean(self.rho * self.T))


def _cell_index(positions: np.ndarray, cells_per_dim: int) -> np.ndarray:
    k = cells_per_dim
    idx = np.minimum((positions * k).astype(np.int64), k - 1)
    cell = np.zeros(positions.shape[0], dtype=np.int64)
    for d in range(positions.shape[1]):
        cell = cell * k + idx[:, d]
    return cell


def macro_from_particles(ensemble, cells_per_dim: int = 1, theta_star: float = 1.0) -> MacroFields:
    """Per-cell density, bulk velocity and temperature.

    Homogeneous ensembles (no positions) give a single global cell. Densities
    are normalized so that a uniform gas has ``rho = 1`` in every cell.
    """
    v = ensemble.velocities
    n = v.shape[0]
    if ensemble.positions is None or cells_per_dim == 1:
        cell = np.zeros(n, dtype=np.int64)
        n_cells = 1
    else:
        if cells_per_dim < 1:
            raise DomainError("cells_per_dim must be positive")
        cell = _cell_index(ensemble.positions, cells_per_dim)
        n_cells = cells_per_dim ** ensemble.positions.shape[1]
    w = ensemble.weight
    mass = np.bincount(cell, minlength=n_cells) * w
    mom = np.stack([np.bincount(cell, v[:, i], n_cells) for i in range(3)], axis=1) * w
    en = np.bincount(cell, np.sum(v * v, axis=1), n_cells) * w
    valid = mass > 0
    safe = np.where(valid, mass, 1.0)
    u = np.where(valid[:, None], mom / safe[:, None], np.nan)
    T = np.where(valid, en / safe, np.nan)
    Tc = T - np.sum(u * u, axis=1)
    rho = mass * n_cells
    e_global = float(np.sum(en) / np.sum(mass) - 3.0 * theta_star)
    return MacroFields(rho, u, T, Tc, valid, e_global)


class ProjectionBasis:
    """The five collision invariants, orthonormal in the Maxwellian weight."""

    def __init__(self, theta_star: float = 1.0):
        if not theta_star > 0:
            raise DomainError("theta_star must be positive")
        self.theta_star = float(theta_star)

    def __call__(self, v) -> np.ndarray:
        """Values of the basis functions, shape ``v.shape[:-1] + (5,)``."""
        v = np.asarray(v, dtype=float)
        th = self.theta_star
        v2 = np.sum(v * v, axis=-1)
        cols = [np.ones_like(v2)] + [v[..., i] / math.sqrt(th) for i in range(3)]
        cols.append((v2 - 3.0 * th) / (th * math.sqrt(6.0)))
        return np.stack(cols, axis=-1)

    def gram(self, order: int = 8) -> np.ndarray:
        """``int phi_i phi_j M dv`` by tensor Gauss-Hermite quadrature (exact for these degrees)."""
        v, w = _hermite_grid(self.theta_star, order)
        phi = self(v)
        return np.einsum("n,ni,nj->ij", w, phi, phi)


def _hermite_grid(theta_star: float, order: int):
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / math.sqrt(2.0 * math.pi)
    g = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    wg = (w[:, None, None] * w[None, :, None] * w[None, None, :]).ravel()
    return g * math.sqrt(theta_star), wg


def pi0_project(velocities, basis: ProjectionBasis, positions=None, cells_per_dim: int = 1,
                weight: Optional[float] = None) -> np.ndarray:
    """Coefficients ``c_i = sum_k w phi_i(v_k)`` per cell, shape ``(cells, 5)``.

    The weight defaults to ``1 / N``, so a Maxwellian sample gives ``c`` close to
    ``(1, 0, 0, 0, 0)`` summed over cells.
    """
    v = np.asarray(velocities, dtype=float)
    w = 1.0 / v.shape[0] if weight is None else weight
    phi = basis(v)
    if positions is None or cells_per_dim == 1:
        return w * phi.sum(axis=0)[None, :]
    cell = _cell_index(np.asarray(positions), cells_per_dim)
    n_cells = cells_per_dim ** np.asarray(positions).shape[1]
    return w * np.stack([np.bincount(cell, phi[:, i], n_cells) for i in range(5)], axis=1)


def pi0_from_function(ratio: Callable[[np.ndarray], np.ndarray], basis: ProjectionBasis,
                      order: int = 12) -> np.ndarray:
    """Coefficients of ``f = M ratio`` computed by Gauss-Hermite quadrature."""
    v, w = _hermite_grid(basis.theta_star, order)
    return np.einsum("n,n,ni->i", w, ratio(v), basis(v))


def P0(coefficients: np.ndarray) -> np.ndarray:
    """Spatial mean of per-cell coefficients."""
    return np.mean(np.atleast_2d(coefficients), axis=0)


def Pi0(coefficients: np.ndarray) -> np.ndarray:
    """The energy coefficient alone."""
    return np.atleast_2d(coefficients)[:, 4]


@dataclass
class HaffFit:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    n_points: int
    tail_fraction: float

    def to_json(self) -> str:
        keys = ("slope", "ci_low", "ci_high", "n_points", "tail_fraction")
        d = asdict(self)
        return json.dumps({k: d[k] for k in keys}, sort_keys=True)


def haff_fit(times, temperatures, tail_fraction: float = 0.5, resamples: int = 200,
             seed: int = 0, t_min: Optional[float] = None, offset: float = 0.0) -> HaffFit:
    """Least squares of ``log T`` against ``log(t + offset)`` over the tail of the series.

    The tail is the last ``tail_fraction`` of the points, or every point with
    ``t >= t_min`` when that is given. The confidence interval is the 2.5 to
    97.5 percentile range of ``resamples`` pair-bootstrap refits.
    """
    t = np.asarray(times, dtype=float)
    T = np.asarray(temperatures, dtype=float)
    if t.shape != T.shape:
        raise DomainError("times and temperatures differ in length")
    if np.any(T <= 0):
        raise DomainError("temperatures must be positive")
    if not 0 < tail_fraction <= 1:
        raise DomainError("tail_fraction must lie in (0, 1]")
    if t_min is not None:
        mask = t >= t_min
    else:
        mask = np.zeros(t.size, dtype=bool)
        mask[t.size - int(math.ceil(tail_fraction * t.size)):] = True
    x = t[mask] + offset
    if np.count_nonzero(mask) < 20:
        raise DomainError("need at least 20 points in the tail")
    if np.any(x <= 0):
        raise DomainError("fitted times must be positive")
    lx, ly = np.log(x), np.log(T[mask])
    slope, intercept = np.polyfit(lx, ly, 1)
    rng = np.random.default_rng(seed)
    boots = np.empty(resamples)
    for b in range(resamples):
        idx = rng.integers(0, lx.size, lx.size)
        boots[b] = np.polyfit(lx[idx], ly[idx], 1)[0]
    lo, hi = np.percentile(boots, [2.5, 97.5])
    frac = float(mask.mean()) if t_min is not None else tail_fraction
    return HaffFit(float(slope), float(intercept), float(lo), float(hi), int(lx.size), frac)


def haff_oracle(t, e0: float, t0_temperature: float = 3.0):
    """Closed-form solution of ``dT/dt = -c T^(3/2)`` for constant restitution.

    ``c = (1 - e0^2) / 8 * (2/3)^(3/2) * K`` with ``K = 8 sqrt(2/pi)``, the mean of
    ``|g|^3`` for a standard 3-D Gaussian ``g``.
    """
    c = haff_rate(e0)
    return t0_temperature / (1.0 + 0.5 * c * math.sqrt(t0_temperature) * np.asarray(t)) ** 2


def haff_rate(e0: float) -> float:
    return (1.0 - e0 * e0) / 8.0 * (2.0 / 3.0) ** 1.5 * 8.0 * math.sqrt(2.0 / math.pi)


def haff_time_shift(e0: float, t0_temperature: float = 3.0) -> float:
    """``t_H`` such that the oracle is ``T0 (t_H / (t + t_H))^2``."""
    return 2.0 / (haff_rate(e0) * math.sqrt(t0_temperature))


def fluctuation_trend(norms) -> float:
    """Slope of ``log(norm)`` against ``log(1 + index)``; negative for a decaying proxy."""
    y = np.asarray(norms, dtype=float)
    keep = y > 0
    if np.count_nonzero(keep) < 2:
        return 0.0
    x = np.log1p(np.arange(y.size))[keep]
    return float(np.polyfit(x, np.log(y[keep]), 1)[0])


@dataclass
class BalanceResiduals:
    times: np.ndarray  # midpoints of output intervals
    mass: np.ndarray
    momentum: np.ndarray  # shape (intervals, 3)
    energy: np.ndarray  # dT/dt minus the modelled right-hand side
    ledger: Optional[np.ndarray]  # Delta T minus the collision and stretch bookkeeping


def moment_balance_residuals(times, masses, momenta, temperatures, schedule=None,
                             dissipation: Optional[Callable[[float, float], float]] = None,
                             collision_ledger=None, stretch_ledger=None) -> BalanceResiduals:
    """Finite-difference residuals of the homogeneous mass, momentum and energy balances.

    The energy model is ``dT/dt = 2 xi T - dissipation(t, T)``, with ``xi`` from
    the schedule (zero without one) and ``dissipation`` defaulting to zero. The
    ledger residual compares the change of ``T`` with the cumulative collision
    and stretch bookkeeping recorded during the run.
    """
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        raise DomainError("need at least two output times")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise DomainError("output times must increase")
    m = np.asarray(masses, dtype=float)
    p = np.asarray(momenta, dtype=float)
    T = np.asarray(temperatures, dtype=float)
    mid = 0.5 * (t[1:] + t[:-1])
    Tm = 0.5 * (T[1:] + T[:-1])
    pm = 0.5 * (p[1:] + p[:-1])
    if schedule is not None:
        xi = np.array([float(schedule.xi_integral(a, b)) for a, b in zip(t[:-1], t[1:])]) / dt
    else:
        xi = np.zeros(dt.size)
    diss = np.zeros(dt.size) if dissipation is None else np.array(
        [dissipation(s, x) for s, x in zip(mid, Tm)])
    energy = np.diff(T) / dt - (2.0 * xi * Tm - diss)
    momentum = np.diff(p, axis=0) / dt[:, None] - xi[:, None] * pm
    ledger = None
    if collision_ledger is not None:
        book = np.asarray(collision_ledger, dtype=float)
        if stretch_ledger is not None:
            book = book + np.asarray(stretch_ledger, dtype=float)
        ledger = (T - T[0]) - book
    return BalanceResiduals(mid, np.diff(m) / dt, momentum, energy, ledger)
