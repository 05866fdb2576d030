"""Restitution coefficients e(r) as functions of the impact speed r.

Three families are provided: a constant coefficient, the viscoelastic law
defined implicitly by ``e + a0 r^(1/5) e^(3/5) = 1``, and user supplied
callables that declare their own class exponents.

For the viscoelastic law we solve in the variable ``x = e^(1/5)``, where the
equation reads ``x^5 + c x^3 = 1`` with ``c = a0 r^(1/5)``. The left side is
convex and increasing on [0, 1], so Newton started to the right of the root
decreases monotonically onto it. The deficit ``1 - e`` equals ``c x^3``
exactly, which avoids cancellation when ``e`` is close to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import vectorize

from granular.errors import DomainError, InvariantViolation, NumericError

ROOT_TOL = 1e-12
INVERSE_TOL = 1e-10
_MAX_NEWTON = 80
_MAX_BISECT = 200


@dataclass(frozen=True)
class RestitutionModel:
    """Immutable description of a restitution law.

    ``kind`` is ``"constant"``, ``"viscoelastic"`` or ``"custom"``. For the
    constant law the class exponents are not meaningful and ``gamma`` is None.
    """

    kind: str
    e0: float = 1.0
    a0: float = 0.0
    gamma: Optional[float] = None
    gamma_bar: Optional[float] = None
    b0_bound: float = 0.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "constant":
            if not 0.0 < self.e0 <= 1.0:
                raise DomainError(f"constant restitution needs e0 in (0, 1], got {self.e0}")
        elif self.kind == "viscoelastic":
            if not self.a0 > 0.0:
                raise DomainError(f"viscoelastic restitution needs a0 > 0, got {self.a0}")
        elif self.kind == "custom":
            if self.func is None:
                raise DomainError("custom restitution needs a callable")
            if self.gamma is None or self.gamma_bar is None:
                raise DomainError("custom restitution must declare gamma and gamma_bar")
            if not self.gamma > 0.0:
                raise DomainError("gamma must be positive")
            if not self.gamma_bar > 1.5 * self.gamma:
                raise DomainError("gamma_bar must exceed 3*gamma/2")
            if not self.a0 > 0.0 or self.b0_bound < 0.0:
                raise DomainError("custom restitution needs a0 > 0 and b0_bound >= 0")
        else:
            raise DomainError(f"unknown restitution kind {self.kind!r}")

    @property
    def is_elastic(self) -> bool:
        return self.kind == "constant" and self.e0 == 1.0


def constant(e0: float) -> RestitutionModel:
    return RestitutionModel(kind="constant", e0=float(e0))


def viscoelastic(a0: float = 1.0, b0_bound: float = 0.0) -> RestitutionModel:
    # b0_bound is an upper bound for |e - 1 + a0 r^g| / r^(2g) on (0, 1]; see verify_class
    return RestitutionModel(kind="viscoelastic", a0=float(a0), gamma=0.2, gamma_bar=0.4,
                            b0_bound=float(b0_bound))


def custom(func, gamma: float, gamma_bar: float, a0: float, b0_bound: float) -> RestitutionModel:
    """Wrap ``func`` (array in, array out) with its declared class constants."""
    return RestitutionModel(kind="custom", func=func, gamma=float(gamma),
                            gamma_bar=float(gamma_bar), a0=float(a0), b0_bound=float(b0_bound))


def _as_speed(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(np.isnan(r)):
        raise DomainError("impact speed must be non-negative")
    return r


@vectorize(["float64(float64)"], cache=True)
def _root_scalar(c):
    # c^(-1/3) lies right of the root when c > 1 because g(c^(-1/3)) = c^(-5/3) > 0
    x = c ** (-1.0 / 3.0) if c > 1.0 else 1.0
    for _ in range(_MAX_NEWTON):
        x2 = x * x
        x3 = x2 * x
        step = (x3 * x2 + c * x3 - 1.0) / (5.0 * x2 * x2 + 3.0 * c * x2)
        x -= step
        if abs(step) <= 1e-15 * x:
            break
    if not abs(x ** 5 + c * x ** 3 - 1.0) < ROOT_TOL:
        # bisection safeguard on [0, 1]
        lo, hi = 0.0, 1.0
        for _ in range(_MAX_BISECT):
            x = 0.5 * (lo + hi)
            if x ** 5 + c * x ** 3 - 1.0 >= 0.0:
                hi = x
            else:
                lo = x
        x = 0.5 * (lo + hi)
    return x


def _visco_root(c) -> np.ndarray:
    """Solve x^5 + c x^3 = 1 for x in (0, 1], elementwise, c >= 0."""
    x = _root_scalar(np.asarray(c, dtype=float))
    resid = np.abs(x ** 5 + c * x ** 3 - 1.0)
    if not np.all(resid < ROOT_TOL):
        raise NumericError("viscoelastic root solve failed",
                           {"max_residual": float(np.nanmax(resid))})
    return x


def _custom_eval(model: RestitutionModel, r: np.ndarray) -> np.ndarray:
    e = np.asarray(model.func(r), dtype=float)
    return np.broadcast_to(e, r.shape).astype(float)


def evaluate(model: RestitutionModel, r):
    """Restitution coefficient at impact speed ``r`` (scalar or array)."""
    r = _as_speed(r)
    if model.kind == "constant":
        out = np.full(r.shape, model.e0)
    elif model.kind == "viscoelastic":
        out = _visco_root(model.a0 * r ** 0.2) ** 5
    else:
        out = _custom_eval(model, r)
    return float(out) if out.ndim == 0 else out


def evaluate_rescaled(model: RestitutionModel, ell: float, r):
    """``e(ell * r)``, the coefficient seen at scale ``ell``."""
    if not ell > 0:
        raise DomainError(f"scale must be positive, got {ell}")
    return evaluate(model, ell * _as_speed(r))


def deficit(model: RestitutionModel, r):
    """``1 - e(r)`` computed without cancellation for the viscoelastic law."""
    r = _as_speed(r)
    if model.kind == "viscoelastic":
        c = model.a0 * r ** 0.2
        out = c * _visco_root(c) ** 3
    else:
        out = 1.0 - np.asarray(evaluate(model, r))
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def scaled_deficit(model: RestitutionModel, ell: float, r):
    """``(1 - e(ell r)) / ell^gamma``, finite as ``ell -> 0`` for class models."""
    if not ell > 0:
        raise DomainError(f"scale must be positive, got {ell}")
    r = _as_speed(r)
    if model.kind == "viscoelastic":
        x = _visco_root(model.a0 * (ell * r) ** 0.2)
        out = model.a0 * r ** 0.2 * x ** 3
    elif model.gamma is None:
        raise DomainError("scaled deficit needs a model with a declared gamma")
    else:
        out = np.asarray(deficit(model, ell * r)) / ell ** model.gamma
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def eta(model: RestitutionModel, r):
    """``r e(r)``, the post-collisional normal speed."""
    r = _as_speed(r)
    out = r * np.asarray(evaluate(model, r))
    return float(out) if np.ndim(out) == 0 else out


def jacobian(model: RestitutionModel, r):
    """Derivative of ``eta``; analytic for built-in laws, central difference otherwise."""
    r = _as_speed(r)
    if model.kind == "constant":
        out = np.full(r.shape, model.e0)
    elif model.kind == "viscoelastic":
        c = model.a0 * r ** 0.2
        x = _visco_root(c)
        e = x ** 5
        q = c / (x * x)  # c e^(-2/5)
        out = e * (1.0 + 0.4 * q) / (1.0 + 0.6 * q)
    else:
        h = 1e-6 * np.maximum(r, 1e-3)
        left = np.maximum(r - h, 0.0)
        out = (np.asarray(eta(model, r + h)) - np.asarray(eta(model, left))) / (r + h - left)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def eta_inverse(model: RestitutionModel, z):
    """Speed ``r`` with ``eta(r) = z``.

    Viscoelastic: with ``x = e^(1/5)`` the relation becomes ``1 - x^5 = k x^2``,
    ``k = a0 z^(1/5)``, which is concave decreasing in x; Newton from the right
    converges monotonically and then ``r = z / e``.
    """
    z = _as_speed(z)
    if model.kind == "constant":
        out = z / model.e0
    elif model.kind == "viscoelastic":
        out = _visco_eta_inverse(model.a0, z)
    else:
        out = np.vectorize(lambda s: _bisect_eta_inverse(model, float(s)), otypes=[float])(z)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def _visco_eta_inverse(a0: float, z: np.ndarray) -> np.ndarray:
    z1 = np.atleast_1d(z).astype(float)
    k = a0 * z1 ** 0.2
    x = np.where(k > 1.0, 1.0 / np.sqrt(np.maximum(k, 1.0)), 1.0)
    for _ in range(_MAX_NEWTON):
        x2 = x * x
        h = 1.0 - x2 * x2 * x - k * x2
        dh = -5.0 * x2 * x2 - 2.0 * k * x
        xn = x - h / dh
        xn = np.minimum(xn, x)  # monotone from the right
        if np.all(np.abs(xn - x) <= 4e-16 * x):
            x = xn
            break
        x = xn
    r = np.where(z1 > 0, z1 / np.maximum(x ** 5, 1e-300), 0.0)
    # polish on the forward map: eta is increasing with derivative eta' >= 0.4 e
    for _ in range(3):
        e = _visco_root(a0 * r ** 0.2) ** 5
        c = a0 * r ** 0.2
        xx = e ** 0.2
        q = c / (xx * xx)
        d = e * (1.0 + 0.4 * q) / (1.0 + 0.6 * q)
        r = np.where(z1 > 0, r - (r * e - z1) / d, 0.0)
    return r.reshape(np.shape(z))


def _bisect_eta_inverse(model: RestitutionModel, z: float) -> float:
    if z == 0.0:
        return 0.0
    lo, hi = 0.0, max(1.0, z)
    f_hi = float(eta(model, hi))
    grow = 0
    while f_hi < z:
        lo, hi = hi, 2.0 * hi
        f_prev, f_hi = f_hi, float(eta(model, hi))
        grow += 1
        if f_hi <= f_prev or grow > 2000:
            raise InvariantViolation(f"eta is not strictly increasing near r={hi:g}")
    f_lo = float(eta(model, lo))
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        f_mid = float(eta(model, mid))
        if not f_lo < f_hi or not f_lo <= f_mid <= f_hi:
            raise InvariantViolation(f"eta is not strictly increasing on [{lo:g}, {hi:g}]")
        if f_mid == f_lo or f_mid == f_hi:
            if hi - lo > 1e-12 * hi:
                raise InvariantViolation(f"eta has a plateau on [{lo:g}, {hi:g}]")
        if f_mid < z:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if hi - lo <= 1e-15 * hi:
            break
    r = 0.5 * (lo + hi)
    if abs(float(eta(model, r)) - z) > INVERSE_TOL * max(1.0, z):
        raise InvariantViolation(f"eta inverse did not reach tolerance at z={z:g}")
    return r


@dataclass
class ClassReport:
    """Outcome of the numerical class-axiom check on a grid.

    Boolean entries are None when an axiom does not apply to the model.
    """

    e_in_unit_interval: bool
    e_nonincreasing: bool
    eta_increasing: bool
    expansion_bound: Optional[bool]
    jacobian_lower_bound: Optional[bool]
    jacobian_deviation: Optional[bool]
    constants: dict
    notes: list

    @property
    def passed(self) -> bool:
        checks = [self.e_in_unit_interval, self.e_nonincreasing, self.eta_increasing,
                  self.expansion_bound, self.jacobian_lower_bound, self.jacobian_deviation]
        return all(c for c in checks if c is not None)


def verify_class(model: RestitutionModel, r_grid, jacobian_alpha: float = 1.0) -> ClassReport:
    """Check the class axioms of ``model`` on ``r_grid`` and report worst-case ratios."""
    r = np.asarray(r_grid, dtype=float)
    if r.ndim != 1 or r.size < 2 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise DomainError("r_grid must be a strictly increasing grid of positive speeds")
    notes = []
    e = np.asarray(evaluate(model, r))
    h = np.asarray(eta(model, r))
    constants = {}
    in_unit = bool(np.all((e > 0) & (e <= 1)))
    nonincreasing = bool(np.all(np.diff(e) <= 0))
    increasing = bool(np.all(np.diff(h) > 0))
    if not increasing:
        bad = int(np.argmin(np.diff(h)))
        notes.append(f"eta not strictly increasing between r={r[bad]:g} and r={r[bad + 1]:g}")
    if model.kind == "viscoelastic" and evaluate(model, 0.0) != 1.0:
        in_unit = False
        notes.append("e(0) differs from 1")

    expansion = jac_lower = jac_dev = None
    if model.kind == "constant":
        notes.append("constant model, gamma-expansion skipped")
    else:
        small = r <= 1.0
        if small.any():
            rs = r[small]
            dev = np.abs(np.asarray(evaluate(model, rs)) - 1.0 + model.a0 * rs ** model.gamma)
            ratio = dev / rs ** model.gamma_bar
            constants["expansion_ratio_max"] = float(ratio.max())
            if model.b0_bound > 0:
                expansion = bool(np.all(ratio <= model.b0_bound * (1 + 1e-12)))
            else:
                expansion = bool(np.isfinite(ratio).all())
                notes.append("no b0 declared; expansion ratio reported, finiteness checked")
        else:
            notes.append("grid has no points in (0, 1]; expansion skipped")
        jac = np.asarray(jacobian(model, r))
        one_minus = np.asarray(deficit(model, r))
        lower_ratio = jac / e ** jacobian_alpha
        constants["jacobian_lower_ratio_min"] = float(lower_ratio.min())
        dev_ratio = np.abs(jac - e) / np.where(one_minus > 0, one_minus, np.inf)
        constants["jacobian_deviation_ratio_max"] = float(dev_ratio.max())
        if model.kind == "viscoelastic":
            jac_lower = bool(np.all(jac >= 0.4 * e ** jacobian_alpha))
            jac_dev = bool(np.all(np.abs(jac - e) <= one_minus * (1 + 1e-12)))
        else:
            jac_lower = bool(np.all(lower_ratio > 0))
            jac_dev = bool(np.isfinite(dev_ratio).all())
    return ClassReport(in_unit, nonincreasing, increasing, expansion, jac_lower, jac_dev,
                       constants, notes)
