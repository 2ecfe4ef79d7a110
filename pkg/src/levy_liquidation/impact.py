"""Temporary market-impact functions.

An impact model supplies the temporary cost per share ``F(x)`` paid when
selling at speed ``x`` (shares/day), its derivative, and the inverse ``G`` of
``h(x) = x**2 * F'(x)``. The optimal speed is ``G(kappa_A(y) / A)``, so ``G``
sits in every inner loop of the solver and is evaluated on log scales:
``log_G(log u)`` never overflows even when ``u`` does.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._numerics import solve_increasing
from .errors import DomainError

__all__ = [
    "ImpactModel",
    "PowerLaw",
    "PiecewisePowerExp",
    "Custom",
    "ValidationReport",
    "eval_F",
    "eval_G",
    "validate_assumptions",
]


def _out(x, template):
    x = np.asarray(x, dtype=float)
    return float(x) if np.ndim(template) == 0 else x


class ImpactModel:
    """Base class for temporary impact functions.

    Subclasses implement ``F`` and ``Fprime``; ``log_G`` falls back to a
    bracketed root search on ``log h(e^s) = log u`` which is valid because
    ``h`` is strictly increasing.
    """

    asymptotic_p: Optional[float] = None

    def F(self, x):
        raise NotImplementedError

    def Fprime(self, x):
        raise NotImplementedError

    def log_h_of_log(self, s):
        """``log(h(e^s))`` for an array of log-speeds ``s``."""
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            return 2.0 * s + np.log(self.Fprime(np.exp(s)))

    def log_F_of_log(self, s):
        """``log F(e^s)``; overridden where ``F`` can overflow."""
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", divide="ignore"):
            return np.log(np.asarray(self.F(np.exp(s)), dtype=float))

    def h(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            out = np.where(x > 0, x * x * self.Fprime(np.where(x > 0, x, 1.0)), 0.0)
        return _out(out, x)

    def log_G(self, log_u):
        """``log G(u)`` given ``log u``; ``-inf`` maps to ``-inf`` and ``+inf`` to ``+inf``."""
        lu = np.asarray(log_u, dtype=float)
        flat = lu.ravel()
        out = np.full(flat.shape, np.nan)
        out[flat == -np.inf] = -np.inf
        out[flat == np.inf] = np.inf
        m = np.isfinite(flat)
        if m.any():
            out[m] = _root_log_h(self, flat[m])
        return _out(out.reshape(lu.shape), lu)

    def G(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore"):
            lg = np.asarray(self.log_G(np.log(np.where(u > 0, u, 0.0))))
        with np.errstate(over="ignore"):
            return _out(np.exp(lg), u)

    def xF(self, x):
        x = np.asarray(x, dtype=float)
        return _out(x * np.asarray(self.F(x)), x)


def _root_log_h(model: ImpactModel, targets: np.ndarray, s0=None, step0: float = 1.0) -> np.ndarray:
    """Solve ``log h(e^s) = targets`` elementwise; returns ``s``.

    The bracket search starts at ``s0`` (default ``max(0, log u)``) with
    initial step ``step0`` and doubles the step until the sign changes.
    """
    n = targets.size

    def f(s, idx):
        v = np.asarray(model.log_h_of_log(s), dtype=float)
        v = np.where(np.isnan(v), -np.inf, v)
        return v - targets[idx]

    if s0 is None:
        # start at x = max(1, u), i.e. s = max(0, log u)
        s0 = np.maximum(0.0, targets)
    s0 = np.asarray(s0, dtype=float)
    f0 = f(s0, np.arange(n))
    lo = s0.copy()
    hi = s0.copy()
    flo = f0.copy()
    fhi = f0.copy()
    up = f0 < 0  # root lies above s0
    step = np.full(n, float(step0))
    for _ in range(200):
        need_hi = up & (fhi < 0)
        need_lo = ~up & (flo >= 0)
        if not (need_hi.any() or need_lo.any()):
            break
        if need_hi.any():
            idx = np.nonzero(need_hi)[0]
            lo[idx], flo[idx] = hi[idx], fhi[idx]
            hi[idx] = hi[idx] + step[idx]
            fhi[idx] = f(hi[idx], idx)
            step[idx] *= 2.0
        if need_lo.any():
            idx = np.nonzero(need_lo)[0]
            hi[idx], fhi[idx] = lo[idx], flo[idx]
            lo[idx] = lo[idx] - step[idx]
            flo[idx] = f(lo[idx], idx)
            step[idx] *= 2.0
    else:  # pragma: no cover - h unbounded by assumption
        raise DomainError("could not bracket the inverse of x^2 F'(x)")
    # Illinois on s: converges fast because log h is close to linear in log x
    return solve_increasing(f, lo, hi, flo, fhi, xtol=1e-14)


@dataclass(frozen=True)
class PowerLaw(ImpactModel):
    """``F(x) = beta * x**gamma``."""

    beta: float
    gamma: float

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma > 0 and math.isfinite(self.beta) and math.isfinite(self.gamma)):
            raise DomainError(f"PowerLaw needs beta, gamma > 0 (got {self.beta}, {self.gamma})")

    @property
    def asymptotic_p(self) -> float:
        return 1.0 - self.gamma

    def F(self, x):
        x = np.asarray(x, dtype=float)
        return _out(self.beta * x**self.gamma, x)

    def Fprime(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return _out(self.beta * self.gamma * x ** (self.gamma - 1.0), x)

    def log_F_of_log(self, s):
        return math.log(self.beta) + self.gamma * np.asarray(s, dtype=float)

    def log_h_of_log(self, s):
        return math.log(self.beta * self.gamma) + (self.gamma + 1.0) * np.asarray(s, dtype=float)

    def log_G(self, log_u):
        lu = np.asarray(log_u, dtype=float)
        return _out((lu - math.log(self.beta * self.gamma)) / (self.gamma + 1.0), lu)


@dataclass(frozen=True)
class PiecewisePowerExp(ImpactModel):
    """Power law ``beta1 x^0.6`` below ``xbar``, exponential growth above.

    The knot offset ``xhat`` is fixed so that value and slope match at ``xbar``.
    Only the exponent 0.6 is supported.
    """

    beta1: float
    beta2: float
    gamma: float
    xbar: float
    exponent: float = 0.6
    xhat: float = field(init=False)

    def __post_init__(self):
        for name in ("beta1", "beta2", "gamma", "xbar"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise DomainError(f"PiecewisePowerExp needs {name} > 0 (got {v})")
        if self.exponent != 0.6:
            raise DomainError("PiecewisePowerExp only supports the exponent 0.6")
        xhat = (math.log(3.0 * self.beta1 / (5.0 * self.beta2 * self.gamma)) - 0.4 * math.log(self.xbar)) / self.gamma
        object.__setattr__(self, "xhat", xhat)

    @property
    def asymptotic_p(self) -> float:
        return 0.4

    def F(self, x):
        x = np.asarray(x, dtype=float)
        low = self.beta1 * np.minimum(x, self.xbar) ** 0.6
        with np.errstate(over="ignore"):
            high = (
                self.beta2 * math.exp(self.gamma * self.xhat) * np.expm1(self.gamma * np.maximum(x - self.xbar, 0.0))
                + self.beta1 * self.xbar**0.6
            )
        return _out(np.where(x <= self.xbar, low, high), x)

    def _log_Fprime(self, x):
        with np.errstate(divide="ignore"):
            low = math.log(0.6 * self.beta1) - 0.4 * np.log(x)
        high = math.log(self.beta2 * self.gamma) + self.gamma * (x - self.xbar + self.xhat)
        return np.where(x <= self.xbar, low, high)

    def Fprime(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            return _out(np.exp(self._log_Fprime(x)), x)

    def log_h_of_log(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore"):
            x = np.exp(s)
        return 2.0 * s + self._log_Fprime(x)

    def log_F_of_log(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            x = np.exp(s)
            low = math.log(self.beta1) + 0.6 * np.minimum(s, math.log(self.xbar))
            y = self.gamma * np.maximum(x - self.xbar, 0.0)
            # log expm1(y) without overflow
            log_em1 = np.where(y > 30.0, y + np.log1p(-np.exp(-y)), np.log(np.expm1(y)))
            high = np.logaddexp(math.log(self.beta2) + self.gamma * self.xhat + log_em1, math.log(self.beta1) + 0.6 * math.log(self.xbar))
        return np.where(x <= self.xbar, low, high)


@dataclass(frozen=True)
class Custom(ImpactModel):
    """User-supplied impact with explicit derivative.

    ``log_Fprime`` may be given to evaluate ``log F'`` without overflow; it is
    used in preference to ``Fprime`` by the inverse ``G``.
    """

    F_func: Callable
    Fprime_func: Callable
    asymptotic_p: Optional[float] = None
    log_Fprime: Optional[Callable] = None

    def F(self, x):
        x = np.asarray(x, dtype=float)
        return _out(self.F_func(x), x)

    def Fprime(self, x):
        x = np.asarray(x, dtype=float)
        return _out(self.Fprime_func(x), x)

    def log_h_of_log(self, s):
        s = np.asarray(s, dtype=float)
        if self.log_Fprime is None:
            return super().log_h_of_log(s)
        with np.errstate(over="ignore"):
            return 2.0 * s + np.asarray(self.log_Fprime(np.exp(s)), dtype=float)


def _check_nonneg_finite(x, what):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{what} must be finite")
    if np.any(arr < 0):
        raise DomainError(f"{what} must be >= 0")
    return arr


def eval_F(model: ImpactModel, x):
    """Temporary cost per share at speed ``x >= 0``."""
    _check_nonneg_finite(x, "speed")
    return model.F(x)


def eval_G(model: ImpactModel, u):
    """Unique ``x >= 0`` with ``x**2 F'(x) = u``."""
    _check_nonneg_finite(u, "impact rate")
    return model.G(u)


@dataclass
class ValidationReport:
    """Outcome of the grid checks on an impact function."""

    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list:
        return [k for k, ok in self.checks.items() if not ok]


def validate_assumptions(model: ImpactModel, grid, growth_ratio: float = 1.5) -> ValidationReport:
    """Check the standing assumptions on ``F`` over a positive increasing grid.

    Conditions: ``F(0) = 0``; ``F >= 0``; ``F`` shrinks towards 0 below the
    grid (continuity at 0); ``x F(x)`` passes the strict midpoint test on
    consecutive pairs; ``h(x) = x^2 F'(x)`` strictly increases; and ``h``
    still grows by at least ``growth_ratio`` over the last decade of the grid.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 3 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise DomainError("grid must be strictly increasing, positive, with at least 3 points")
    rep = ValidationReport()
    with np.errstate(all="ignore"):
        f0 = float(model.F(np.array([0.0]))[0])
        rep.checks["F(0)=0"] = f0 == 0.0
        rep.details["F(0)=0"] = f"F(0) = {f0!r}"

        F = np.asarray(model.F(grid), dtype=float)
        rep.checks["F>=0"] = bool(np.all(F >= 0) and np.all(np.isfinite(F)))
        rep.details["F>=0"] = f"min F on grid = {np.nanmin(F)!r}"

        tiny = grid[0] * np.array([1e-6, 1e-3, 1.0])
        Ft = np.abs(np.asarray(model.F(tiny), dtype=float))
        rep.checks["continuous at 0"] = bool(np.all(np.isfinite(Ft)) and (Ft[0] <= Ft[1] <= Ft[2]) and (Ft[0] < Ft[2] or Ft[2] == 0))
        rep.details["continuous at 0"] = f"|F| at {tiny.tolist()} = {Ft.tolist()}"

        a, b = grid[:-1], grid[1:]
        m = 0.5 * (a + b)
        lhs = m * np.asarray(model.F(m))
        rhs = 0.5 * (a * np.asarray(model.F(a)) + b * np.asarray(model.F(b)))
        bad = ~(lhs < rhs)
        rep.checks["xF(x) strictly convex"] = not bad.any()
        rep.details["xF(x) strictly convex"] = f"{int(bad.sum())} midpoint violations"

        logh = np.asarray(model.log_h_of_log(np.log(grid)), dtype=float)
        inc = np.diff(logh) > 0
        rep.checks["x^2F'(x) increasing"] = bool(not np.any(np.isnan(logh)) and inc.all())
        rep.details["x^2F'(x) increasing"] = f"{int((~inc).sum())} non-increasing steps"

        x_last = grid[-1]
        lh = np.asarray(model.log_h_of_log(np.log([x_last / 10.0, x_last])), dtype=float)
        growth = lh[1] - lh[0] if np.isfinite(lh[0]) else np.nan
        rep.checks["x^2F'(x) unbounded"] = bool(lh[1] == np.inf or growth >= math.log(growth_ratio))
        rep.details["x^2F'(x) unbounded"] = f"h(x)/h(x/10) at x={x_last!r}: {np.exp(growth)!r}"
    return rep
