"""Closed-form optimal liquidation.

For a cumulant ``kappa_A`` and an impact model with inverse map ``G``, the
optimal speed in feedback form is ``xi*(y) = G(kappa_A(y) / A)``. The time
needed to bring the position from ``y0`` down to ``Y`` is

    t(Y) = ∫_Y^{y0} du / G(kappa_A(u) / A),

and the optimal path is the inverse of ``t``. Rather than integrate the ODE
``dY/dt = -xi*(Y)`` forwards (stiff near ``Y = 0``), ``t`` is tabulated by
quadrature on a geometric grid in ``Y`` and inverted exactly by root search.
All integrands are handled as logarithms so that the explosive cumulants of
jump models never overflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator

from ._numerics import geometric_subpanels, golden_min, log_panel_integrals
from .errors import AdmissibilityError, DivergenceError, DomainError, InvariantError, QuadratureError
from .impact import ImpactModel
from .levy import KappaFunction

__all__ = [
    "Termination",
    "SolveConfig",
    "Trajectory",
    "SolveResult",
    "TailProbe",
    "HJBCheck",
    "OptimalLiquidation",
    "classify_termination",
    "optimal_speed",
    "liquidation_time",
    "time_to_fraction",
    "trajectory",
    "value_function",
    "hjb_residual",
    "solve",
]


class Termination(enum.Enum):
    FINITE = "finite"
    INFINITE = "infinite"
    UNCLASSIFIED = "unclassified"


def classify_termination(p: Optional[float], mu_sign: float) -> Termination:
    """Finite/infinite liquidation time from the small-speed exponent ``p`` and drift sign.

    ``p`` is the exponent with ``x^p F'(x) -> K > 0`` as ``x -> 0``. Negative
    drift always liquidates in finite time; zero drift does so only when
    ``p < 0``. Anything outside ``p < 1`` (or positive drift) is unclassified.
    """
    if p is None or not math.isfinite(p) or p >= 1.0:
        return Termination.UNCLASSIFIED
    if mu_sign < 0:
        return Termination.FINITE
    if mu_sign == 0:
        return Termination.INFINITE if p >= 0.0 else Termination.FINITE
    return Termination.UNCLASSIFIED


@dataclass(frozen=True)
class SolveConfig:
    """Risk aversion, initial position and discretisation controls."""

    A: float
    y0: float
    y_grid_points: int = 400
    y_floor_fraction: float = 1e-12
    rtol: float = 1e-12
    order: int = 8

    def __post_init__(self):
        if not (self.A > 0 and math.isfinite(self.A)):
            raise DomainError(f"A must be positive and finite (got {self.A})")
        if not (self.y0 >= 0 and math.isfinite(self.y0)):
            raise DomainError(f"y0 must be finite and >= 0 (got {self.y0})")
        if self.y_grid_points < 2:
            raise DomainError("y_grid_points must be at least 2")
        if not 0 < self.y_floor_fraction < 1:
            raise DomainError("y_floor_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class Trajectory:
    """Sampled optimal path.

    ``truncated`` is set when the path never reaches zero and positions were
    cut off at ``floor``.
    """

    times: np.ndarray
    positions: np.ndarray
    tau: float
    truncated: bool = False
    floor: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.positions, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise InvariantError("times and positions must be 1-D arrays of equal length")
        if t.size and (np.any(np.diff(t) < 0) or np.any(np.diff(y) > 0) or np.any(y < 0)):
            raise InvariantError("trajectory must have increasing times and non-increasing positions >= 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", y)

    @property
    def y0(self) -> float:
        return float(self.positions[0]) if self.positions.size else 0.0

    def interpolate(self, t):
        """Monotone piecewise-cubic interpolation of the samples."""
        t = np.asarray(t, dtype=float)
        if self.times.size < 2:
            return np.full(t.shape, self.y0)
        # samples closer in time than the float resolution of the span make PCHIP slopes overflow
        eps = 1e-12 * (self.times[-1] - self.times[0])
        keep = [0]
        for i in range(1, self.times.size):
            if self.times[i] - self.times[keep[-1]] > eps:
                keep.append(i)
        if keep[-1] != self.times.size - 1:
            keep[-1] = self.times.size - 1
        if len(keep) < 2:
            return np.where(t > self.times[0], self.positions[-1], self.y0)
        f = PchipInterpolator(self.times[keep], self.positions[keep], extrapolate=False)
        y = f(np.clip(t, self.times[0], self.times[-1]))
        y = np.where(t > self.times[-1], 0.0 if math.isfinite(self.tau) else self.positions[-1], y)
        return np.maximum(y, 0.0)


@dataclass(frozen=True)
class TailProbe:
    """Local exponent ``q`` of ``1/G(kappa_A(u)/A) ~ u^(-q)`` at small ``u``."""

    u: np.ndarray
    exponents: np.ndarray
    verdict: str  # "converges", "diverges" or "inconclusive"


@dataclass(frozen=True)
class SolveResult:
    trajectory: Trajectory
    value: float
    log_value: float
    termination: Termination
    tau: float
    speed_samples: np.ndarray  # columns: Y, xi*
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class HJBCheck:
    """``kappa_A(y) + min_x {A x F(x) - x v'(y)}`` and where the minimum sits.

    Speeds are measured in units of ``xi*(y)``: ``ratio`` is the minimiser
    over ``xi*`` and ``cell_ratio`` the local grid spacing. ``scaled`` is the
    residual divided by ``kappa_A(y)``, which stays finite when the cumulant
    itself overflows.
    """

    scaled: float
    ratio: float
    cell_ratio: float
    log_kappa: float
    log_xi_star: float

    @property
    def kappa(self) -> float:
        return math.exp(self.log_kappa) if self.log_kappa < 709.0 else math.inf

    @property
    def xi_star(self) -> float:
        return math.exp(self.log_xi_star) if self.log_xi_star < 709.0 else math.inf

    @property
    def minimiser(self) -> float:
        return self.ratio * self.xi_star

    @property
    def residual(self) -> float:
        return self.scaled * self.kappa if self.scaled != 0 else 0.0

    @property
    def relative(self) -> float:
        """``|residual| / (1 + kappa_A(y))``."""
        if self.log_kappa == -math.inf:
            return 0.0
        # kappa / (1 + kappa) = 1 / (1 + exp(-log kappa))
        return abs(self.scaled) / (1.0 + math.exp(-self.log_kappa)) if self.log_kappa > -709.0 else abs(self.scaled) * self.kappa

    @property
    def minimiser_ok(self) -> bool:
        return abs(self.ratio - 1.0) <= self.cell_ratio


_DIVERGENCE_MARGIN = 1e-3


class OptimalLiquidation:
    """Closed-form optimal strategy for one ``(kappa_A, F)`` pair.

    Rejects models whose drift is positive: the objective is then unbounded
    below and no optimal strategy exists.
    """

    def __init__(self, kf: KappaFunction, impact: ImpactModel, rtol: float = 1e-12, order: int = 8, ratio: float = 1.1):
        if kf.drift > 0:
            raise AdmissibilityError(
                f"drift {kf.drift:.6g} > 0: selling is never optimal and no optimal strategy exists"
            )
        self.kf = kf
        self.impact = impact
        self.rtol = rtol
        self.order = order
        self.ratio = ratio
        self._logA = math.log(kf.A)

    # -- pointwise quantities --------------------------------------------------------

    def log_speed(self, y):
        """``log xi*(y)``; ``-inf`` at ``y = 0``."""
        y = np.asarray(y, dtype=float)
        lk = np.asarray(self.kf.log(y), dtype=float)
        if np.any(np.isnan(lk[y > 0])) or np.any(lk[y > 0] == -np.inf):
            raise InvariantError("kappa_A must be positive for y > 0 when the drift is <= 0")
        out = np.asarray(self.impact.log_G(lk - self._logA), dtype=float)
        return float(out) if np.ndim(y) == 0 else out

    def speed(self, y):
        with np.errstate(over="ignore"):
            return np.exp(self.log_speed(y))

    def log_value_integrand(self, u):
        """``log(kappa/G + A F(G))`` at ``u``: also ``log v'(u)``."""
        u = np.asarray(u, dtype=float)
        lk = np.asarray(self.kf.log(u), dtype=float)
        lg = np.asarray(self.impact.log_G(lk - self._logA), dtype=float)
        with np.errstate(invalid="ignore"):
            lf = np.asarray(self.impact.log_F_of_log(lg), dtype=float)
            out = np.logaddexp(lk - lg, self._logA + lf)
        out = np.where(u == 0, -np.inf, out)
        return float(out) if np.ndim(u) == 0 else out

    # -- integrals -------------------------------------------------------------------

    def _integrate(self, log_f, lo, hi):
        """``∫_{lo}^{hi} exp(log_f)`` elementwise in log space, ``0 < lo <= hi``."""
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        out = np.full(lo.shape, -np.inf)
        m = hi > lo
        if not m.any():
            return out
        slo, shi, owner = geometric_subpanels(lo[m], hi[m], self.ratio)
        logs, info = log_panel_integrals(log_f, slo, shi, rtol=self.rtol, order=self.order)
        if logs is None:
            raise QuadratureError("time/value quadrature did not converge", info)
        acc = np.full(int(m.sum()), -np.inf)
        np.logaddexp.at(acc, owner, logs)
        out[m] = acc
        return out

    def log_time_between(self, lo, hi):
        """``log ∫_lo^hi du / xi*(u)``."""
        return self._integrate(lambda u: -self.log_speed(u), lo, hi)

    def time_between(self, lo, hi):
        with np.errstate(over="ignore"):
            return np.exp(self.log_time_between(lo, hi))

    def tail_probe(self, y0: float, fractions=(1e-8, 1e-10, 1e-12, 1e-14)) -> TailProbe:
        """Numerical divergence test for ``∫_0 du / xi*(u)``.

        The slope of ``log(1/xi*)`` against ``log u`` over one decade gives a
        local exponent ``q``; the integral converges iff ``q < 1``. The verdict
        needs the last two exponents to agree to 1e-2 and to sit more than
        ``1e-3`` away from 1 (``q >= 1 - 1e-3`` counts as divergent).
        """
        u = y0 * np.asarray(fractions, dtype=float)
        l_hi = -self.log_speed(u)
        l_lo = -self.log_speed(u / 10.0)
        q = -(l_hi - l_lo) / math.log(10.0)
        stable = abs(q[-1] - q[-2]) < 1e-2
        if not np.all(np.isfinite(q)) or not stable:
            verdict = "inconclusive"
        elif q[-1] >= 1.0 - _DIVERGENCE_MARGIN:
            verdict = "diverges"
        else:
            verdict = "converges"
        return TailProbe(u, q, verdict)

    def _tail_time(self, y_floor: float) -> float:
        """``∫_0^{y_floor} du / xi*`` assuming ``1/xi* ~ u^-q`` below the floor."""
        q = self.tail_probe(y_floor, fractions=(1.0, 0.1))
        qq = float(q.exponents[-1])
        if not qq < 1.0:
            raise DivergenceError("tail integral diverges", {"q": qq})
        return float(y_floor * math.exp(-self.log_speed(y_floor)) / (1.0 - qq)), qq

    def termination(self, y0: float):
        """Analytic class when the impact exponent is known, cross-checked numerically."""
        mu = self.kf.drift
        analytic = classify_termination(self.impact.asymptotic_p, float(np.sign(mu)))
        probe = self.tail_probe(y0) if y0 > 0 else None
        return analytic, probe

    def liquidation_time(self, y0: float, floor_fraction: float = 1e-12) -> float:
        if y0 == 0:
            return 0.0
        analytic, probe = self.termination(y0)
        if analytic is Termination.INFINITE:
            return math.inf
        if analytic is Termination.UNCLASSIFIED:
            if probe.verdict == "diverges":
                return math.inf
            if probe.verdict != "converges":
                raise DivergenceError(
                    "liquidation time could not be classified",
                    {"u": probe.u.tolist(), "q": probe.exponents.tolist()},
                )
        yf = y0 * floor_fraction
        body = float(self.time_between(yf, y0)[0])
        return body + self._tail_time(yf)[0]

    def value(self, y):
        """``v(y) = ∫_0^y (kappa/G + A F(G)) du``; may be ``inf`` when it exceeds a double."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_value(y))

    def log_value(self, y, floor_fraction: float = 1e-14):
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        out = np.full(flat.shape, -np.inf)
        m = flat > 0
        if m.any():
            yy = flat[m]
            body = self._integrate(self.log_value_integrand, yy * floor_fraction, yy)
            # below the floor the integrand is a power of u; add that piece
            yf = yy * floor_fraction
            li = np.asarray(self.log_value_integrand(yf), dtype=float)
            li10 = np.asarray(self.log_value_integrand(yf / 10.0), dtype=float)
            r = (li - li10) / math.log(10.0)  # integrand ~ u^r
            with np.errstate(divide="ignore", invalid="ignore"):
                tail = np.where(r > -1.0, li + np.log(yf) - np.log1p(r), -np.inf)
            out[m] = np.logaddexp(body, tail)
        out = out.reshape(y.shape)
        return float(out) if np.ndim(y) == 0 else out

    # -- trajectory ------------------------------------------------------------------

    def table(self, cfg: SolveConfig):
        """Positions ``Y_k`` (descending, geometric) and times ``t(Y_k)``."""
        y0 = cfg.y0
        ys = y0 * np.geomspace(1.0, cfg.y_floor_fraction, cfg.y_grid_points)
        ys[0] = y0
        dt = self.time_between(ys[1:], ys[:-1])
        ts = np.concatenate([[0.0], np.cumsum(dt)])
        return ys, ts

    def position_at(self, times, ys, ts, tau: float):
        """Exact inversion of ``t(Y)`` at the requested times."""
        times = np.asarray(times, dtype=float)
        out = np.empty(times.shape)
        flat_t = times.ravel()
        res = np.empty(flat_t.shape)
        y0 = ys[0]
        res[flat_t <= 0] = y0
        beyond = flat_t >= ts[-1]
        inside = (flat_t > 0) & ~beyond
        if beyond.any():
            if math.isfinite(tau):
                rf, q = self._tail_time(ys[-1])
                rem = np.maximum(tau - flat_t[beyond], 0.0)
                res[beyond] = ys[-1] * np.minimum(rem / rf, 1.0) ** (1.0 / (1.0 - q))
            else:
                res[beyond] = ys[-1]
        if inside.any():
            tt = flat_t[inside]
            j = np.clip(np.searchsorted(ts, tt, side="right") - 1, 0, ts.size - 2)
            s_lo = np.log(ys[j + 1])
            s_hi = np.log(ys[j])

            def f(s, idx):
                # increasing in s: larger Y means less elapsed time
                y = np.exp(s)
                return tt[idx] - (ts[j[idx]] + self.time_between(np.minimum(y, ys[j[idx]]), ys[j[idx]]))

            # Newton on log Y from a linear guess, safeguarded by the node bracket;
            # d t / d log Y = -Y / xi*(Y)
            s = np.clip(np.interp(tt, ts, np.log(ys)), s_lo, s_hi)
            a_s, b_s = s_lo.copy(), s_hi.copy()
            act = np.arange(tt.size)
            for _ in range(100):
                if act.size == 0:
                    break
                sa = s[act]
                fv = f(sa, act)
                slope = np.exp(sa - self.log_speed(np.exp(sa)))
                a_s[act] = np.where(fv <= 0, sa, a_s[act])
                b_s[act] = np.where(fv >= 0, sa, b_s[act])
                with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
                    newton = fv / slope
                sn = sa - newton
                lo_b, hi_b = a_s[act], b_s[act]
                tol = 1e-13 * (1.0 + np.abs(sa))
                small = np.abs(newton) <= tol
                bad = ~np.isfinite(sn) | (sn <= lo_b) | (sn >= hi_b)
                sn = np.where(small, np.clip(sn, lo_b, hi_b), np.where(bad, 0.5 * (lo_b + hi_b), sn))
                s[act] = np.where(fv == 0, sa, sn)
                conv = (fv == 0) | small | (hi_b - lo_b <= tol)
                act = act[~conv]
            res[inside] = np.exp(s)
        out[...] = res.reshape(times.shape)
        return out


def _check_domain(kf: KappaFunction, y0: float):
    if y0 >= kf.domain_upper:
        raise AdmissibilityError(f"initial position {y0:.6g} must be below delta_bar_A = {kf.domain_upper:.6g}")


def optimal_speed(kf: KappaFunction, impact: ImpactModel, y):
    """``G(kappa_A(y) / A)``."""
    return OptimalLiquidation(kf, impact).speed(y)


def liquidation_time(kf: KappaFunction, impact: ImpactModel, y0: float) -> float:
    """``∫_0^{y0} du / G(kappa_A(u)/A)``; ``inf`` when divergent."""
    _check_domain(kf, y0)
    return OptimalLiquidation(kf, impact).liquidation_time(y0)


def time_to_fraction(kf: KappaFunction, impact: ImpactModel, y0: float, fraction: float) -> float:
    """Time until a fraction ``fraction`` of ``y0`` has been sold."""
    if not 0 <= fraction <= 1:
        raise DomainError("fraction must lie in [0, 1]")
    _check_domain(kf, y0)
    sol = OptimalLiquidation(kf, impact)
    if fraction == 1:
        return sol.liquidation_time(y0)
    if fraction == 0 or y0 == 0:
        return 0.0
    return float(sol.time_between((1.0 - fraction) * y0, y0)[0])


def value_function(kf: KappaFunction, impact: ImpactModel, y):
    _check_domain(kf, float(np.max(y)))
    return OptimalLiquidation(kf, impact).value(y)


def _build(kf, impact, cfg: SolveConfig, times=None):
    _check_domain(kf, cfg.y0)
    sol = OptimalLiquidation(kf, impact, rtol=cfg.rtol, order=cfg.order)
    diag = {}
    if cfg.y0 == 0:
        t = np.zeros(1) if times is None else np.asarray(times, dtype=float)
        traj = Trajectory(t, np.zeros(t.shape), 0.0)
        return sol, traj, Termination.FINITE, 0.0, diag
    analytic, probe = sol.termination(cfg.y0)
    diag["tail_exponents"] = probe.exponents.tolist()
    diag["tail_verdict"] = probe.verdict
    diag["analytic_termination"] = analytic.value
    ys, ts = sol.table(cfg)
    if analytic is Termination.FINITE or (analytic is Termination.UNCLASSIFIED and probe.verdict == "converges"):
        tau = float(ts[-1] + sol._tail_time(ys[-1])[0])
    else:
        tau = math.inf
    term = analytic
    if times is None:
        t_out, y_out = ts, ys
        if math.isfinite(tau):
            t_out = np.append(ts, tau)
            y_out = np.append(ys, 0.0)
    else:
        t_out = np.asarray(times, dtype=float)
        if np.any(np.diff(t_out) < 0):
            raise DomainError("sample times must be non-decreasing")
        y_out = sol.position_at(t_out, ys, ts, tau)
        y_out = np.minimum.accumulate(y_out)
    truncated = not math.isfinite(tau)
    traj = Trajectory(t_out, y_out, tau, truncated=truncated, floor=float(ys[-1]))
    diag["table"] = (ys, ts)
    return sol, traj, term, tau, diag


def trajectory(kf: KappaFunction, impact: ImpactModel, cfg: SolveConfig, times=None) -> Trajectory:
    """Optimal path, sampled at the Y-grid nodes or at the given ``times``."""
    return _build(kf, impact, cfg, times)[1]


def solve(kf: KappaFunction, impact: ImpactModel, cfg: SolveConfig, times=None) -> SolveResult:
    """Trajectory, value ``v(y0)``, termination class and sampled speeds."""
    sol, traj, term, tau, diag = _build(kf, impact, cfg, times)
    lv = float(sol.log_value(cfg.y0)) if cfg.y0 > 0 else -math.inf
    speeds = np.column_stack([traj.positions, sol.speed(traj.positions)])
    with np.errstate(over="ignore"):
        value = math.exp(lv) if lv < 709.0 else math.inf
    return SolveResult(traj, value, lv, term, tau, speeds, diag)


def hjb_residual(kf: KappaFunction, impact: ImpactModel, y: float, x_grid=None, n_grid: int = 201) -> HJBCheck:
    """Evaluate the HJB equation at ``y`` using ``v'(y)`` from the closed form.

    The minimisation over speeds runs on ``x_grid`` (default: uniform on
    ``[0, 10 xi*(y)]``) and is then refined by golden-section search inside
    the two grid cells around the best grid point. Everything is computed in
    units of ``xi*(y)`` and ``kappa_A(y)`` so extreme states do not overflow.
    """
    _check_domain(kf, y)
    if y == 0:
        return HJBCheck(0.0, 1.0, math.inf, -math.inf, -math.inf)
    sol = OptimalLiquidation(kf, impact)
    lk = float(kf.log(y))
    lxi = float(sol.log_speed(y))
    ldv = float(sol.log_value_integrand(y))
    if x_grid is None:
        r_grid = np.linspace(0.0, 10.0, n_grid)
    else:
        r_grid = np.asarray(x_grid, dtype=float) / math.exp(lxi)
    logA = math.log(kf.A)

    def g(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            lx = lxi + np.log(r)
            a = np.exp(logA + lx + np.asarray(impact.log_F_of_log(lx)) - lk)
            b = np.exp(lx + ldv - lk)
        return np.where(r > 0, a - b, 0.0)

    vals = g(r_grid)
    i = int(np.argmin(vals))
    lo = r_grid[max(i - 1, 0)]
    hi = r_grid[min(i + 1, r_grid.size - 1)]
    cell = float(max(hi - r_grid[i], r_grid[i] - lo))
    rr, vr = golden_min(g, np.array([lo]), np.array([hi]))
    if vr[0] < vals[i]:
        rm, vm = float(rr[0]), float(vr[0])
    else:
        rm, vm = float(r_grid[i]), float(vals[i])
    return HJBCheck(1.0 + vm, rm, cell, lk, lxi)