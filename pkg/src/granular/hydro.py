"""Pseudo-spectral solver for the forced incompressible Navier-Stokes-Fourier system

    du/dt - (nu0/theta) lap u + theta P(u . grad u) = xi(t) u
    dT/dt - (nu1/theta^2) lap T + theta u . grad T = c_T xi(t) T,  c_T = 3 (1 - gamma) theta^2 / 2

on the periodic box [0, 2 pi L)^d, with ``theta`` the reference temperature.
Time stepping is a two-stage integrating-factor Runge-Kutta scheme whose
factor carries both the diffusion and the forcing, so the linear part is
exact. The advection coefficient ``theta`` can be switched to 1.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from granular.errors import DomainError, InvariantViolation, NumericError
from granular.scaling import ScalingSchedule

DIVERGENCE_TOL = 1e-10
_MAGIC = b"GRHY"


@dataclass(frozen=True)
class HydroConfig:
    n: int = 64
    dim: int = 2
    nu0: float = 1.0
    nu1: float = 1.0
    theta_star: float = 1.0
    gamma: float = 0.2
    schedule: Optional[ScalingSchedule] = None
    xi_constant: Optional[float] = None  # overrides the schedule when set
    dt: float = 1e-3
    t_end: float = 1.0
    dealias: bool = True
    conventional: bool = False  # unit advection coefficients
    box: float = 1.0  # side length in units of 2 pi
    cfl_max: float = 0.5

    def __post_init__(self):
        problems = []
        if self.n < 4 or self.n & (self.n - 1):
            problems.append("n must be a power of two, at least 4")
        if self.dim not in (2, 3):
            problems.append("dim must be 2 or 3")
        if not (self.nu0 > 0 and self.nu1 > 0):
            problems.append("nu0 and nu1 must be positive")
        if not self.theta_star > 0:
            problems.append("theta_star must be positive")
        if not self.dt > 0 or not self.t_end >= 0:
            problems.append("dt must be positive and t_end non-negative")
        if not self.box > 0:
            problems.append("box must be positive")
        if problems:
            raise DomainError("; ".join(problems))

    @property
    def viscosity(self) -> float:
        return self.nu0 / self.theta_star

    @property
    def conductivity(self) -> float:
        return self.nu1 / self.theta_star ** 2

    @property
    def advection(self) -> float:
        return 1.0 if self.conventional else self.theta_star

    @property
    def heating(self) -> float:
        return 1.5 * (1.0 - self.gamma) * self.theta_star ** 2

    def xi(self, t: float) -> float:
        if self.xi_constant is not None:
            return self.xi_constant
        return 0.0 if self.schedule is None else float(self.schedule.xi(t))

    def xi_integral(self, t0: float, t1: float) -> float:
        if self.xi_constant is not None:
            return self.xi_constant * (t1 - t0)
        return 0.0 if self.schedule is None else float(self.schedule.xi_integral(t0, t1))


class Grid:
    """Wavenumbers for ``rfftn`` layouts."""

    def __init__(self, n: int, dim: int, box: float = 1.0, dealias: bool = True):
        self.n, self.dim, self.box = n, dim, box
        full = np.fft.fftfreq(n, 1.0 / n) / box
        half = np.fft.rfftfreq(n, 1.0 / n) / box
        axes = [full] * (dim - 1) + [half]
        self.k = np.stack(np.meshgrid(*axes, indexing="ij"))
        self.k2 = np.sum(self.k ** 2, axis=0)
        self.k2_safe = np.where(self.k2 == 0, 1.0, self.k2)
        ints = [np.fft.fftfreq(n, 1.0 / n)] * (dim - 1) + [np.fft.rfftfreq(n, 1.0 / n)]
        kint = np.stack(np.meshgrid(*ints, indexing="ij"))
        if dealias:
            self.mask = np.all(np.abs(kint) < n / 3.0, axis=0)
        else:
            self.mask = np.all(np.abs(kint) < n / 2.0, axis=0)
        self.shape = (n,) * dim
        self._mirror = self._mirror_index()

    def _mirror_index(self):
        # index of -k along the full axes (the half axis is its own mirror on its edge planes)
        return tuple((-np.arange(self.n)) % self.n for _ in range(self.dim - 1))

    def fft(self, f):
        return np.fft.rfftn(f, axes=tuple(range(-self.dim, 0)))

    def ifft(self, f_hat):
        return np.fft.irfftn(f_hat, s=self.shape, axes=tuple(range(-self.dim, 0)))

    def symmetrize(self, f_hat):
        """Make the self-conjugate planes of an ``rfftn`` array exactly Hermitian."""
        out = f_hat.copy()
        last = f_hat.shape[-1] - 1
        for plane in (0, last) if self.n % 2 == 0 else (0,):
            sl = out[..., plane]
            mirrored = sl
            for ax, idx in enumerate(self._mirror):
                mirrored = np.take(mirrored, idx, axis=sl.ndim - (self.dim - 1) + ax)
            out[..., plane] = 0.5 * (sl + np.conj(mirrored))
        return out


def leray_project(u_hat, grid: Grid):
    """Remove the gradient part: ``u <- (I - k k^T / |k|^2) u``; the mean mode is untouched."""
    div = np.sum(grid.k * u_hat, axis=0)
    return u_hat - grid.k * (div / grid.k2_safe)


@dataclass
class SpectralField:
    u_hat: np.ndarray  # shape (dim,) + rfft shape
    theta_hat: np.ndarray
    time: float = 0.0

    def copy(self) -> "SpectralField":
        return SpectralField(self.u_hat.copy(), self.theta_hat.copy(), self.time)


def max_divergence(fields: SpectralField, grid: Grid) -> float:
    """``max_k |k . u(k)|`` relative to the coefficient norm."""
    norm = math.sqrt(float(np.sum(np.abs(fields.u_hat) ** 2))) or 1.0
    return float(np.max(np.abs(np.sum(grid.k * fields.u_hat, axis=0)))) / norm


def density(fields: SpectralField, grid: Grid, theta_star: float) -> np.ndarray:
    """Density fluctuation from the Boussinesq relation ``rho = -theta_star T``."""
    return -theta_star * grid.ifft(fields.theta_hat)


def kinetic_energy(fields: SpectralField, grid: Grid) -> float:
    """``(1/2) <|u|^2>`` with ``<.>`` the box average."""
    u = grid.ifft(fields.u_hat)
    return 0.5 * float(np.mean(np.sum(u * u, axis=0)))


def enstrophy(fields: SpectralField, grid: Grid) -> float:
    """``<|grad u|^2>``, equal to the mean squared vorticity for solenoidal fields."""
    total = 0.0
    for j in range(grid.dim):
        g = grid.ifft(1j * grid.k[j] * fields.u_hat)
        total += float(np.mean(np.sum(g * g, axis=0)))
    return total


def _nonlinear(u_hat, th_hat, grid: Grid, cfg: HydroConfig):
    u = grid.ifft(u_hat)
    adv_u = np.zeros_like(u)
    for j in range(grid.dim):
        du = grid.ifft(1j * grid.k[j] * u_hat)
        adv_u += u[j] * du
    grad_t = [grid.ifft(1j * grid.k[j] * th_hat) for j in range(grid.dim)]
    adv_t = sum(u[j] * grad_t[j] for j in range(grid.dim))
    nu = -cfg.advection * grid.fft(adv_u) * grid.mask
    nt = -cfg.advection * grid.fft(adv_t) * grid.mask
    return leray_project(nu, grid), nt, float(np.max(np.abs(u))) if u.size else 0.0


def _factors(grid: Grid, cfg: HydroConfig, t0: float, t1: float):
    h = t1 - t0
    xi_int = cfg.xi_integral(t0, t1)
    eu = np.exp(-cfg.viscosity * grid.k2 * h + xi_int)
    et = np.exp(-cfg.conductivity * grid.k2 * h + cfg.heating * xi_int)
    return eu, et


def _spectrum(fields: SpectralField, grid: Grid) -> list:
    shell = np.rint(np.sqrt(grid.k2) * grid.box).astype(int)
    e = np.sum(np.abs(fields.u_hat) ** 2, axis=0)
    return np.bincount(shell.ravel(), e.ravel()).tolist()


def step(fields: SpectralField, cfg: HydroConfig, grid: Optional[Grid] = None) -> SpectralField:
    """Advance by ``cfg.dt`` with the integrating-factor Heun scheme."""
    grid = grid or Grid(cfg.n, cfg.dim, cfg.box, cfg.dealias)
    t0, dt = fields.time, cfg.dt
    u, th = fields.u_hat, fields.theta_hat
    n_u, n_t, umax = _nonlinear(u, th, grid, cfg)
    cfl = dt * umax * cfg.n / (2.0 * math.pi * cfg.box)
    if cfl >= cfg.cfl_max:
        raise InvariantViolation(f"CFL number {cfl:.3g} at t={t0:g} exceeds {cfg.cfl_max}")
    eu, et = _factors(grid, cfg, t0, t0 + dt)
    u1 = leray_project(eu * (u + dt * n_u), grid)
    t1 = et * (th + dt * n_t)
    n_u1, n_t1, _ = _nonlinear(u1, t1, grid, cfg)
    u_new = leray_project(eu * u + 0.5 * dt * (eu * n_u + n_u1), grid)
    th_new = et * th + 0.5 * dt * (et * n_t + n_t1)
    out = SpectralField(grid.symmetrize(u_new), grid.symmetrize(th_new), t0 + dt)
    if not (np.all(np.isfinite(out.u_hat)) and np.all(np.isfinite(out.theta_hat))):
        raise NumericError("non-finite field", {"time": out.time, "spectrum": _spectrum(fields, grid)})
    return out


@dataclass
class HydroTrajectory:
    times: np.ndarray
    kinetic_energy: np.ndarray
    enstrophy: np.ndarray
    max_divergence: np.ndarray
    theta_mean: np.ndarray
    energy_balance_residual: np.ndarray  # at interior record times
    final: SpectralField
    snapshots: List[SpectralField] = field(default_factory=list)


def run(cfg: HydroConfig, initial: SpectralField, record_every: int = 1,
        snapshot_every: int = 0) -> HydroTrajectory:
    """Integrate to ``t_end`` recording energy, enstrophy and divergence."""
    grid = Grid(cfg.n, cfg.dim, cfg.box, cfg.dealias)
    f = initial.copy()
    steps = int(round((cfg.t_end - f.time) / cfg.dt))
    if steps < 0 or not math.isclose(f.time + steps * cfg.dt, cfg.t_end, rel_tol=1e-9, abs_tol=1e-12):
        raise DomainError("t_end - start time must be a whole number of steps")
    rec = {"t": [], "ke": [], "ens": [], "div": [], "th": []}
    snaps = []

    def record(x):
        rec["t"].append(x.time)
        rec["ke"].append(kinetic_energy(x, grid))
        rec["ens"].append(enstrophy(x, grid))
        rec["div"].append(max_divergence(x, grid))
        rec["th"].append(float(np.real(x.theta_hat[(0,) * cfg.dim])) / cfg.n ** cfg.dim)

    record(f)
    for s in range(1, steps + 1):
        f = step(f, cfg, grid)
        d = max_divergence(f, grid)
        if d >= DIVERGENCE_TOL:
            raise InvariantViolation(f"divergence {d:.3g} at t={f.time:g}")
        if record_every and s % record_every == 0:
            record(f)
        if snapshot_every and s % snapshot_every == 0:
            snaps.append(f.copy())
    t = np.array(rec["t"])
    ke = np.array(rec["ke"])
    ens = np.array(rec["ens"])
    if t.size >= 3:
        dke = (ke[2:] - ke[:-2]) / (t[2:] - t[:-2])
        xi = np.array([cfg.xi(x) for x in t[1:-1]])
        resid = dke + cfg.viscosity * ens[1:-1] - 2.0 * xi * ke[1:-1]
    else:
        resid = np.zeros(0)
    return HydroTrajectory(t, ke, ens, np.array(rec["div"]), np.array(rec["th"]), resid, f, snaps)


def from_real(u, theta, grid: Grid, time: float = 0.0, project: bool = True) -> SpectralField:
    u_hat = np.stack([grid.fft(c) for c in u]) * grid.mask
    if project:
        u_hat = leray_project(u_hat, grid)
    return SpectralField(grid.symmetrize(u_hat), grid.symmetrize(grid.fft(theta) * grid.mask), time)


def coordinates(grid: Grid):
    x = np.arange(grid.n) * (2.0 * math.pi * grid.box / grid.n)
    return np.meshgrid(*([x] * grid.dim), indexing="ij")


def taylor_green(cfg: HydroConfig, amplitude: float = 1.0, theta=None) -> SpectralField:
    """``u = A (sin x cos y, -cos x sin y[, 0])``; ``theta`` defaults to zero."""
    grid = Grid(cfg.n, cfg.dim, cfg.box, cfg.dealias)
    xs = coordinates(grid)
    x, y = xs[0] / cfg.box, xs[1] / cfg.box
    u = [amplitude * np.sin(x) * np.cos(y), -amplitude * np.cos(x) * np.sin(y)]
    if cfg.dim == 3:
        u.append(np.zeros_like(x))
    th = np.zeros_like(x) if theta is None else np.broadcast_to(theta, x.shape).astype(float)
    return from_real(np.array(u), th, grid)


def random_solenoidal(cfg: HydroConfig, seed: int = 0, slope: float = -5.0 / 3.0,
                      energy: float = 0.5, k_max: Optional[int] = None, theta_amplitude: float = 0.0) -> SpectralField:
    """Random divergence-free field with shell energy ``~ k^slope`` up to ``k_max``."""
    grid = Grid(cfg.n, cfg.dim, cfg.box, cfg.dealias)
    rng = np.random.default_rng(seed)
    k_max = k_max or max(2, cfg.n // 8)
    kmag = np.sqrt(grid.k2) * cfg.box
    active = (kmag > 0) & (kmag <= k_max)
    amp = np.where(active, np.where(active, kmag, 1.0) ** ((slope - (cfg.dim - 1)) / 2.0), 0.0)
    noise = rng.normal(size=(cfg.dim,) + grid.shape)
    u_hat = np.stack([grid.fft(c) for c in noise]) * amp * grid.mask
    u_hat = leray_project(u_hat, grid)
    f = SpectralField(grid.symmetrize(u_hat), np.zeros(grid.k2.shape, complex))
    ke = kinetic_energy(f, grid)
    if ke > 0:
        f.u_hat *= math.sqrt(energy / ke)
    if theta_amplitude:
        th = rng.normal(size=grid.shape)
        th_hat = grid.fft(th) * np.where(kmag <= k_max, 1.0, 0.0) * grid.mask
        th_hat[(0,) * cfg.dim] = 0.0
        th_real = grid.ifft(th_hat)
        th_hat *= theta_amplitude / max(float(np.std(th_real)), 1e-300)
        f.theta_hat = grid.symmetrize(th_hat)
    return f


def uniform_theta(cfg: HydroConfig, value: float) -> SpectralField:
    grid = Grid(cfg.n, cfg.dim, cfg.box, cfg.dealias)
    u = np.zeros((cfg.dim,) + grid.shape)
    return from_real(u, np.full(grid.shape, float(value)), grid)


def write_snapshot(path, fields: SpectralField, cfg: HydroConfig) -> None:
    """Binary layout: ``GRHY``, int64 dim, int64 n, float64 time, then the
    real-space components u_1..u_dim and theta as row-major float64 arrays."""
    grid = Grid(cfg.n, cfg.dim, cfg.box, cfg.dealias)
    u = grid.ifft(fields.u_hat)
    th = grid.ifft(fields.theta_hat)
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<qqd", cfg.dim, cfg.n, fields.time))
        for arr in list(u) + [th]:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_snapshot(path, cfg: HydroConfig) -> SpectralField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise DomainError("not a snapshot file")
    dim, n, time = struct.unpack("<qqd", raw[4:28])
    if dim != cfg.dim or n != cfg.n:
        raise DomainError(f"snapshot grid {n}^{dim} does not match the configuration")
    data = np.frombuffer(raw[28:], dtype="<f8").reshape((dim + 1,) + (n,) * dim)
    grid = Grid(cfg.n, cfg.dim, cfg.box, cfg.dealias)
    return from_real(data[:dim], data[dim], grid, time)
