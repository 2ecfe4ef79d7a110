"""Impact functions that make a Lévy model trade exactly like a Brownian one.

Given a Brownian model with cumulant ``kB(Y) = -A_t u Y + A_t^2 s2 Y^2 / 2``
and impact ``F_B``, the Brownian optimal speed at position ``Y`` is ``z`` with
``z^2 F_B'(z) = kB(Y) / A``. Solving the quadratic for ``Y`` gives a map
``Y_B(z)``. A jump model with cumulant ``kL`` produces the same trajectory
when its impact ``F_L`` satisfies

    F_L'(z) = kL(Y_B(z)) / (A z^2),

which is the integrand tabulated here. ``F_L`` is exposed as an
:class:`~levy_liquidation.impact.ImpactModel` so the generic solver can be
run on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from ._numerics import geometric_subpanels, log_panel_integrals
from .errors import DegeneracyError, DomainError, QuadratureError
from .impact import ImpactModel, _root_log_h
from .levy import BrownianLinear, KappaFunction
from .solver import SolveConfig, time_to_fraction, trajectory

__all__ = ["ImpactBridge", "DerivedImpact", "derive_levy_impact", "verify_trajectories_coincide", "make_bridge"]


@dataclass(frozen=True)
class ImpactBridge:
    """Brownian impact ``bm_impact`` and the jump cumulant it is mapped onto.

    ``u_tilde`` and ``sigma_tilde_sq`` are the drift ``mu + sigma^2/2`` and
    variance of the Brownian log-price; ``A_tilde = A * s_tilde``.
    """

    bm_impact: ImpactModel
    levy_kappa: KappaFunction
    u_tilde: float
    sigma_tilde_sq: float
    A: float
    A_tilde: float

    def __post_init__(self):
        if not self.sigma_tilde_sq > 0:
            raise DegeneracyError("Brownian variance must be positive")
        if not (self.A > 0 and self.A_tilde > 0):
            raise DomainError("risk aversions must be positive")

    @property
    def bm_model(self) -> BrownianLinear:
        """The arithmetic Brownian model whose cumulant is ``kB``."""
        s = self.A_tilde / self.A
        return BrownianLinear(s * self.u_tilde, s * math.sqrt(self.sigma_tilde_sq))

    @property
    def bm_kappa(self) -> KappaFunction:
        return KappaFunction(self.bm_model, self.A)

    def log_position_of_speed(self, log_z):
        """``log Y_B(z)`` from ``log z``, stable for ``u_tilde <= 0``."""
        lz = np.asarray(log_z, dtype=float)
        lh = np.asarray(self.bm_impact.log_h_of_log(lz), dtype=float)
        u, s2, A, At = self.u_tilde, self.sigma_tilde_sq, self.A, self.A_tilde
        lX = math.log(2.0 * A * s2) + lh
        with np.errstate(divide="ignore"):
            log_root = 0.5 * (np.logaddexp(2.0 * math.log(abs(u)), lX) if u != 0 else lX)
            if u <= 0:
                # (u + sqrt(u^2 + X)) / (At s2) = X / (At s2 (sqrt(u^2 + X) - u))
                den = np.logaddexp(log_root, math.log(-u)) if u < 0 else log_root
                out = lX - math.log(At * s2) - den
            else:
                out = np.logaddexp(math.log(u), log_root) - math.log(At * s2)
        return out

    def log_ratio_at_zero(self) -> float:
        """``lim kL(Y) / kB(Y)`` as ``Y -> 0``, from the small-position expansions."""
        kf = self.levy_kappa
        model = kf.model
        s = self.A_tilde / self.A
        if self.u_tilde < 0:
            ratio = (model.mu / s) / self.u_tilde
        elif self.u_tilde == 0:
            if model.mu != 0:
                raise DegeneracyError("jump model has drift but the Brownian model is a martingale")
            sig = getattr(model, "sigma", 0.0)
            second = (sig**2 + model.jump_second_moment()) / s**2
            ratio = second / self.sigma_tilde_sq
        else:
            raise DomainError("Brownian drift u_tilde must be <= 0")
        if not ratio > 0:
            raise DegeneracyError("the jump cumulant and the Brownian cumulant have incompatible small-position limits")
        return math.log(ratio)


def make_bridge(bm_impact: ImpactModel, levy_kappa: KappaFunction, bm_model: BrownianLinear) -> ImpactBridge:
    """Bridge against the arithmetic Brownian model ``bm_model`` at the same ``A``.

    ``bm_model`` should be expressed in the same price units as the jump
    model (for linearised models: ``s_tilde`` times the log-price drift and
    volatility).
    """
    s = getattr(levy_kappa.model, "s_tilde", 1.0)
    return ImpactBridge(
        bm_impact=bm_impact,
        levy_kappa=levy_kappa,
        u_tilde=bm_model.mu / s,
        sigma_tilde_sq=(bm_model.sigma / s) ** 2,
        A=levy_kappa.A,
        A_tilde=levy_kappa.A * s,
    )


class DerivedImpact(ImpactModel):
    """``F_L`` realised through its derivative; values are memoised per speed.

    ``F_L(x)`` is ``r0 F_B(x0) + ∫_{x0}^x F_L'``, where ``x0 = x * 1e-12`` and
    ``r0`` is the limit of ``F_L'/F_B'`` at 0. Every ``x`` is integrated on its
    own mesh, so cached and uncached values coincide.
    """

    def __init__(self, bridge: ImpactBridge, rtol: float = 1e-12, cache_size: int = 1 << 16):
        self.bridge = bridge
        self.rtol = rtol
        self._logA = math.log(bridge.A)
        self._log_r0 = bridge.log_ratio_at_zero()
        self.asymptotic_p = bridge.bm_impact.asymptotic_p
        self._F_cached = lru_cache(maxsize=cache_size)(self._F_scalar)
        self._table = None

    def _guess_table(self):
        # coarse log-log table of the jump cumulant, only used to seed root searches
        if self._table is None:
            ly = np.linspace(math.log(1e-30), math.log(1e12), 841)
            lk = np.asarray(self.bridge.levy_kappa.log(np.exp(ly)), dtype=float)
            ok = np.isfinite(lk)
            ly, lk = ly[ok], lk[ok]
            keep = np.concatenate([[True], np.diff(lk) > 0])
            self._table = (ly[keep], lk[keep])
        return self._table

    def _guess_log_speed(self, log_u):
        """Approximate ``log G_L(u)``: invert the table for ``Y`` and map through the Brownian model."""
        ly_t, lk_t = self._guess_table()
        lk = np.asarray(log_u, dtype=float) + self._logA
        slope_lo = (ly_t[1] - ly_t[0]) / (lk_t[1] - lk_t[0])
        slope_hi = (ly_t[-1] - ly_t[-2]) / (lk_t[-1] - lk_t[-2])
        ly = np.interp(lk, lk_t, ly_t)
        ly = np.where(lk < lk_t[0], ly_t[0] + slope_lo * (lk - lk_t[0]), ly)
        ly = np.where(lk > lk_t[-1], ly_t[-1] + slope_hi * (lk - lk_t[-1]), ly)
        kb = self.bridge.bm_kappa
        lkb = np.asarray(kb.log(np.exp(ly)), dtype=float)
        return np.asarray(self.bridge.bm_impact.log_G(lkb - self._logA), dtype=float)

    def log_G(self, log_u):
        lu = np.asarray(log_u, dtype=float)
        flat = lu.ravel()
        out = np.full(flat.shape, np.nan)
        out[flat == -np.inf] = -np.inf
        out[flat == np.inf] = np.inf
        m = np.isfinite(flat)
        if m.any():
            with np.errstate(all="ignore"):
                s0 = self._guess_log_speed(flat[m])
            s0 = np.where(np.isfinite(s0), s0, np.maximum(0.0, flat[m]))
            out[m] = _root_log_h(self, flat[m], s0=s0, step0=1e-4)
        out = out.reshape(lu.shape)
        return float(out) if np.ndim(lu) == 0 else out

    def log_h_of_log(self, s):
        ly = self.bridge.log_position_of_speed(s)
        with np.errstate(over="ignore"):
            y = np.exp(ly)
        return np.asarray(self.bridge.levy_kappa.log(y), dtype=float) - self._logA

    def log_Fprime(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            lx = np.log(x)
        return self.log_h_of_log(lx) - 2.0 * lx

    def Fprime(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(over="ignore"):
            out = np.exp(self.log_Fprime(x))
        return float(out) if np.ndim(x) == 0 else out

    def _F_scalar(self, x: float) -> float:
        if x == 0:
            return 0.0
        lf = self._log_F_scalar(x)
        return math.exp(lf) if lf < 709.0 else math.inf

    def _log_F_scalar(self, x: float) -> float:
        x0 = x * 1e-12
        head = self._log_r0 + float(np.log(self.bridge.bm_impact.F(x0)))
        lo, hi, owner = geometric_subpanels([x0], [x], 2.0)
        logs, info = log_panel_integrals(self.log_Fprime, lo, hi, rtol=self.rtol)
        if logs is None:
            raise QuadratureError("derived impact quadrature did not converge", info)
        return float(np.logaddexp(head, np.logaddexp.reduce(logs)))

    def F(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x < 0) or np.any(~np.isfinite(x)):
            raise DomainError("speeds must be finite and >= 0")
        out = np.array([self._F_cached(float(v)) for v in x.ravel()]).reshape(x.shape)
        return float(out) if np.ndim(x) == 0 else out

    def log_F_of_log(self, s):
        s = np.asarray(s, dtype=float)
        out = np.array([self._log_F_scalar(math.exp(v)) if v > -np.inf else -np.inf for v in s.ravel()]).reshape(s.shape)
        return float(out) if np.ndim(s) == 0 else out


def derive_levy_impact(bridge: ImpactBridge, x):
    """``F_L(x)`` for the bridge (a fresh, uncached evaluation)."""
    x = np.asarray(x, dtype=float)
    imp = DerivedImpact(bridge, cache_size=0)
    return imp.F(x)


@dataclass(frozen=True)
class CoincidenceReport:
    gap: float
    times: np.ndarray
    y_levy: np.ndarray
    y_bm: np.ndarray


def verify_trajectories_coincide(
    bridge: ImpactBridge,
    y0: float,
    horizon: Optional[float] = None,
    n_times: int = 100,
    y_grid_points: int = 400,
    details: bool = False,
):
    """Sup-norm gap between the jump-model path under ``F_L`` and the Brownian path under ``F_B``.

    ``horizon`` defaults to the Brownian time needed to sell 99.9% of ``y0``.
    """
    if y0 == 0:
        rep = CoincidenceReport(0.0, np.zeros(1), np.zeros(1), np.zeros(1))
        return rep if details else 0.0
    kb = bridge.bm_kappa
    if horizon is None:
        horizon = time_to_fraction(kb, bridge.bm_impact, y0, 0.999)
    times = np.linspace(0.0, horizon, n_times)
    derived = DerivedImpact(bridge)
    cfg = SolveConfig(bridge.A, y0, y_grid_points=y_grid_points)
    yl = trajectory(bridge.levy_kappa, derived, cfg, times=times).positions
    yb = trajectory(kb, bridge.bm_impact, cfg, times=times).positions
    gap = float(np.max(np.abs(yl - yb)))
    rep = CoincidenceReport(gap, times, yl, yb)
    return rep if details else gap
