"""Brute-force minimisation of the deterministic liquidation objective.

The objective of a position path ``Y`` is

    J(Y) = ∫_0^T kappa_A(Y_t) + A xi_t F(xi_t) dt,      xi = -dY/dt.

On a uniform grid the first term uses the trapezoid rule and the second is
exact for piecewise-linear paths. Both terms are convex in the node
positions, so coordinate-wise minimisation under the ordering constraints
``Y_{i+1} <= Y_i <= Y_{i-1}`` reaches the global minimum. Nothing here uses
the closed-form speed; the oracle only needs ``kappa_A`` and ``F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import DomainError, InvariantError
from .impact import ImpactModel
from .levy import BrownianLinear, KappaFunction

__all__ = ["DiscreteProblem", "MinimiseResult", "discrete_objective", "minimise", "TabulatedKappa"]


@dataclass(frozen=True)
class DiscreteProblem:
    kf: KappaFunction
    impact: ImpactModel
    y0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 2:
            raise DomainError("n_steps must be at least 2")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise DomainError("horizon T must be positive and finite")
        if not (self.y0 >= 0 and math.isfinite(self.y0)):
            raise DomainError("y0 must be finite and >= 0")
        if self.y0 >= self.kf.domain_upper:
            raise DomainError("y0 must lie below delta_bar_A")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_steps + 1)


@dataclass(frozen=True)
class MinimiseResult:
    positions: np.ndarray
    value: float
    sweeps: int
    converged: bool
    history: list = field(default_factory=list)


class TabulatedKappa:
    """Cubic spline of ``log kappa_A`` against ``log y`` on ``[y_min, y_max]``.

    Below ``y_min`` the cumulant is continued as a power of ``y`` with the
    end slope of the table. Brownian cumulants are evaluated exactly.
    """

    def __init__(self, kf: KappaFunction, y_max: float, y_min_fraction: float = 1e-16, points: int = 1601):
        self.kf = kf
        self.exact = isinstance(kf.model, BrownianLinear)
        if self.exact or y_max <= 0:
            return
        ly = np.linspace(math.log(y_max * y_min_fraction), math.log(y_max), points)
        lk = np.asarray(kf.log(np.exp(ly)), dtype=float)
        if not np.all(np.isfinite(lk)):
            raise InvariantError("kappa_A must be positive on the table")
        self._spline = CubicSpline(ly, lk)
        self._ly0, self._lk0 = ly[0], lk[0]
        self._slope0 = (lk[1] - lk[0]) / (ly[1] - ly[0])
        self._ly1 = ly[-1]

    def _log(self, y):
        with np.errstate(divide="ignore"):
            ly = np.log(y)
        lk = np.where(ly < self._ly0, self._lk0 + self._slope0 * (ly - self._ly0), self._spline(np.minimum(ly, self._ly1)))
        return ly, lk

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.exact:
            return np.asarray(self.kf(y), dtype=float)
        _, lk = self._log(y)
        with np.errstate(over="ignore"):
            return np.where(y > 0, np.exp(lk), 0.0)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        if self.exact:
            m = self.kf.model
            A = self.kf.A
            return -A * m.mu + A * A * m.sigma**2 * y
        # kappa' = kappa * (d log kappa / d log y) / y; convexity keeps the end slope >= 1
        slope0 = max(self._slope0, 1.0)
        ly, lk = self._log(np.maximum(y, 1e-300))
        slope = np.where(ly < self._ly0, slope0, self._spline(np.minimum(ly, self._ly1), 1))
        with np.errstate(over="ignore"):
            inner = np.exp(lk - ly) * slope
            at0 = math.exp(self._lk0 - self._ly0) if slope0 == 1.0 else 0.0
        return np.where(y > 0, inner, at0)

    def second_derivative(self, y):
        y = np.asarray(y, dtype=float)
        if self.exact:
            m = self.kf.model
            return np.full(y.shape, (self.kf.A * m.sigma) ** 2)
        slope0 = max(self._slope0, 1.0)
        ly, lk = self._log(np.maximum(y, 1e-300))
        inside = ly >= self._ly0
        lyc = np.minimum(ly, self._ly1)
        s1 = np.where(inside, self._spline(lyc, 1), slope0)
        s2 = np.where(inside, self._spline(lyc, 2), 0.0)
        with np.errstate(over="ignore"):
            return np.exp(lk - 2.0 * ly) * (s2 + s1 * (s1 - 1.0))


def _check_path(problem: DiscreteProblem, y: np.ndarray):
    if y.shape != (problem.n_steps + 1,):
        raise DomainError(f"expected {problem.n_steps + 1} positions, got {y.shape}")
    if y[0] != problem.y0:
        raise DomainError("positions[0] must equal y0")
    if np.any(np.diff(y) > 0) or y[-1] < 0:
        raise DomainError("positions must be non-increasing and >= 0")


def _objective(problem: DiscreteProblem, y: np.ndarray, kappa) -> float:
    dt = problem.dt
    k = np.asarray(kappa(y), dtype=float)
    running = dt * (0.5 * k[0] + k[1:-1].sum() + 0.5 * k[-1])
    xi = -np.diff(y) / dt
    impact = problem.kf.A * dt * float(np.sum(xi * np.asarray(problem.impact.F(xi), dtype=float)))
    return float(running + impact)


def discrete_objective(problem: DiscreteProblem, positions) -> float:
    """Trapezoid rule on ``kappa_A(Y)`` plus the exact impact cost of each step."""
    y = np.asarray(positions, dtype=float)
    _check_path(problem, y)
    return _objective(problem, y, problem.kf)


def _marginal_cost(impact: ImpactModel, xi):
    """``d/dxi (xi F(xi)) = F + xi F'``, zero at ``xi = 0``."""
    xi = np.maximum(np.asarray(xi, dtype=float), 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.asarray(impact.F(xi), dtype=float) + xi * np.asarray(impact.Fprime(np.where(xi > 0, xi, 1.0)), dtype=float)
    return np.where(xi > 0, out, 0.0)


def _marginal_slope(impact: ImpactModel, xi, h: float = 1e-6):
    """``d/dxi`` of :func:`_marginal_cost` by central differences (only steers Newton)."""
    xi = np.maximum(np.asarray(xi, dtype=float), 1e-300)
    return (_marginal_cost(impact, xi * (1 + h)) - _marginal_cost(impact, xi * (1 - h))) / (2 * h * xi)


def _line_minimise(problem: DiscreteProblem, kappa, old, up, down, weight, last, omega: float):
    """Exact minimisers of independent 1-D local objectives on ``[down, up]``.

    Each local objective is ``weight * kappa(x)`` plus the impact cost of the
    step arriving from ``up`` and, unless ``last``, of the step leaving to
    ``down``. Its derivative is increasing, so the minimiser is its root
    (or a box end). The over-relaxed point is kept only when it stays in the
    box and lowers the local value. Returns the new positions.
    """
    dt, A, imp = problem.dt, problem.kf.A, problem.impact

    def local(x, sel=slice(None)):
        xa = (up[sel] - x) / dt
        xb = np.where(last[sel], 0.0, (x - down[sel]) / dt)
        cost = xa * np.asarray(imp.F(np.maximum(xa, 0.0))) + xb * np.asarray(imp.F(np.maximum(xb, 0.0)))
        return weight[sel] * np.asarray(kappa(x)) + A * dt * cost

    def slope(x, sel):
        xa = (up[sel] - x) / dt
        xb = np.where(last[sel], 0.0, (x - down[sel]) / dt)
        return weight[sel] * kappa.derivative(x) + A * (_marginal_cost(imp, xb) - _marginal_cost(imp, xa))

    def curvature(x, sel):
        xa = (up[sel] - x) / dt
        xb = np.where(last[sel], 0.0, (x - down[sel]) / dt)
        tail = np.where(last[sel], 0.0, _marginal_slope(imp, xb))
        return weight[sel] * kappa.second_derivative(x) + A / dt * (_marginal_slope(imp, xa) + tail)

    every = np.arange(old.size)
    s_lo = slope(down, every)
    s_hi = slope(up, every)
    x = np.where(s_lo >= 0, down, up)
    act = np.nonzero((s_lo < 0) & (s_hi > 0))[0]
    # safeguarded Newton on the increasing slope, started at the current position
    lo, hi = down[act].copy(), up[act].copy()
    glo, ghi = s_lo[act].copy(), s_hi[act].copy()
    xa = np.clip(old[act], lo, hi)
    pos = np.arange(act.size)
    for _ in range(100):
        if pos.size == 0:
            break
        sel = act[pos]
        xc = xa[pos]
        g = slope(xc, sel)
        left, right = g <= 0, g >= 0
        lo[pos] = np.where(left, xc, lo[pos])
        glo[pos] = np.where(left, g, glo[pos])
        hi[pos] = np.where(right, xc, hi[pos])
        ghi[pos] = np.where(right, g, ghi[pos])
        a, b, ga, gb = lo[pos], hi[pos], glo[pos], ghi[pos]
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xc - g / curvature(xc, sel)
            # false position between the bracket ends when Newton leaves the bracket
            xf = a - ga * (b - a) / (gb - ga)
        tol = 1e-12 * (1.0 + np.abs(xc))
        # a Newton target just past a bracket end means the root sits on that end
        edge = np.isfinite(xn) & (((xn <= a) & (a - xn <= tol)) | ((xn >= b) & (xn - b <= tol)))
        xn = np.where(edge, np.clip(xn, a, b), xn)
        bad = ~edge & (~np.isfinite(xn) | (xn <= a) | (xn >= b))
        fbad = ~np.isfinite(xf) | (xf <= a) | (xf >= b)
        xn = np.where(bad, np.where(fbad, 0.5 * (a + b), xf), xn)
        done = (g == 0) | edge | (np.abs(xn - xc) <= tol) | (b - a <= tol)
        xa[pos] = np.where(g == 0, xc, xn)
        pos = pos[~done]
    x[act] = xa
    f_old = local(old)
    if omega != 1.0:
        relaxed = old + omega * (x - old)
        ok = (relaxed >= down) & (relaxed <= up)
        ok[ok] = local(relaxed[ok], ok) <= f_old[ok]
        x = np.where(ok, relaxed, x)
    return np.where(local(x) <= f_old, x, old)


def _sweep(problem: DiscreteProblem, y: np.ndarray, kappa, parity: int, omega: float):
    """Update every node of one parity (they do not interact)."""
    n = problem.n_steps
    idx = np.arange(1 + ((1 + parity) % 2), n + 1, 2)
    if idx.size == 0:
        return
    last = idx == n
    down = np.where(last, 0.0, y[np.minimum(idx + 1, n)])
    weight = np.where(last, 0.5, 1.0) * problem.dt
    y[idx] = _line_minimise(problem, kappa, y[idx], y[idx - 1], down, weight, last, omega)


def _tie_sweep(problem: DiscreteProblem, y: np.ndarray, kappa) -> bool:
    """Move each run of equal positions as one block.

    Inside a run every single-node box is a point, so node updates alone
    can stall there. The block's local objective has the same shape as a
    node's with the summed trapezoid weights. Runs are processed in two
    alternating batches so that no two updated blocks share a step.
    """
    n = problem.n_steps
    tied = np.flatnonzero(y[1:-1] == y[2:]) + 1  # node k tied to k + 1
    if tied.size == 0:
        return False
    breaks = np.flatnonzero(np.diff(tied) > 1)
    starts = np.append(tied[0], tied[breaks + 1])
    ends = np.append(tied[breaks], tied[-1]) + 1
    for batch in (0, 1):
        i, j = starts[batch::2], ends[batch::2]
        if i.size == 0:
            continue
        last = j == n
        weight = problem.dt * ((j - i + 1) - 0.5 * last)
        down = np.where(last, 0.0, y[np.minimum(j + 1, n)])
        new = _line_minimise(problem, kappa, y[i], y[i - 1], down, weight, last, 1.0)
        for a, b, v in zip(i, j, new):
            y[a : b + 1] = v
    return True


def _newton_step(problem: DiscreteProblem, y: np.ndarray, kappa) -> bool:
    """One damped Newton step over the runs of equal positions.

    Each run of tied nodes moves as one variable, so the reduced Hessian is
    still tridiagonal and only the steps between runs couple it. The run
    holding ``y0`` is fixed, as is a run at zero that would be pushed lower.
    The step is cut back to keep the path monotone and non-negative, then
    halved until the objective drops. Coordinate sweeps alone crawl where
    the impact curvature blows up at small speeds; this only speeds them up.
    """
    n, dt, A, imp = problem.n_steps, problem.dt, problem.kf.A, problem.impact
    xi = -np.diff(y) / dt
    moving = xi > 0
    mc = _marginal_cost(imp, xi)
    c = np.zeros(n)
    c[moving] = A / dt * _marginal_slope(imp, xi[moving])
    w = np.ones(n)
    w[-1] = 0.5
    x = y[1:]
    grad = w * dt * kappa.derivative(x) + A * (np.append(mc[1:], 0.0) - mc)
    curv = w * dt * kappa.second_derivative(x)
    label = np.concatenate([[0], np.cumsum(moving)])  # run index of every node
    nb = int(label[-1]) + 1
    g_b = np.bincount(label[1:], grad, minlength=nb)
    h_b = np.bincount(label[1:], curv, minlength=nb)
    c_in = np.zeros(nb)  # coupling through the step entering each run
    c_in[label[1:][moving]] = c[moving]
    c_out = np.append(c_in[1:], 0.0)
    free = np.ones(nb, dtype=bool)
    free[0] = False
    if y[-1] == 0 and g_b[-1] >= 0:
        free[-1] = False
    var = np.flatnonzero(free)
    if var.size == 0:
        return False
    # the free runs form one contiguous range, so the reduced system is tridiagonal
    diag = h_b[var] + c_in[var] + c_out[var]
    off = -c_out[var[:-1]]
    band = np.zeros((3, var.size))
    band[0, 1:] = off
    band[1] = diag
    band[2, :-1] = off
    gv = g_b[var]
    if not (np.all(np.isfinite(band)) and np.all(np.isfinite(gv))):
        return False
    try:
        dv = -solve_banded((1, 1), band, gv)
    except (np.linalg.LinAlgError, ValueError):
        return False
    if not np.all(np.isfinite(dv)) or gv @ dv >= 0:
        return False
    d_b = np.zeros(nb)
    d_b[var] = dv
    d = d_b[label[1:]]
    dd = np.concatenate([[0.0], d])
    rate = np.append(np.diff(dd), -d[-1])  # growth of Y_k - Y_{k-1} and of -Y_n, both kept <= 0
    gap = np.append(np.diff(y), -y[-1])
    shrink = rate > 0
    t = 1.0
    if np.any(shrink):
        t = min(1.0, float(np.min(-gap[shrink] / rate[shrink])))
    if not t > 0:
        return False
    f0 = _objective(problem, y, kappa)
    for _ in range(40):
        trial = y.copy()
        trial[1:] = x + t * d
        trial = np.maximum(np.minimum.accumulate(trial), 0.0)
        if _objective(problem, trial, kappa) < f0:
            y[:] = trial
            return True
        t *= 0.5
    return False


def _relaxation(problem: DiscreteProblem, y: np.ndarray, kappa) -> float:
    """Over-relaxation factor from the local tridiagonal Hessian.

    The Jacobi spectral radius is bounded row by row (Gershgorin) and mapped
    to the classical optimal factor ``2 / (1 + sqrt(1 - rho^2))``, capped at
    the value for a pure second-difference operator.
    """
    n, dt, A = problem.n_steps, problem.dt, problem.kf.A
    xi = -np.diff(y) / dt
    c = A / dt * _marginal_slope(problem.impact, xi)  # coupling through step k (between nodes k-1 and k)
    d2k = kappa.second_derivative(y[1:])
    w = np.ones(n)
    w[-1] = 0.5
    c_next = np.append(c[1:], 0.0)
    diag = w * dt * d2k + c + c_next
    off = np.append(0.0, c[1:]) + c_next
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = off / diag
    rho = float(np.nanmax(ratio)) if np.any(np.isfinite(ratio)) else 1.0
    rho = min(rho, 1.0) * math.cos(math.pi / (n + 1))
    return 2.0 / (1.0 + math.sqrt(max(1.0 - rho * rho, 0.0)))


def _descend(problem: DiscreteProblem, y: np.ndarray, kappa, rtol: float, max_sweeps: int, omega: float):
    history = []
    f_old = _objective(problem, y, kappa)
    history.append(f_old)
    for sweep in range(1, max_sweeps + 1):
        _newton_step(problem, y, kappa)
        _sweep(problem, y, kappa, 1, omega)
        _sweep(problem, y, kappa, 0, omega)
        _tie_sweep(problem, y, kappa)
        if np.any(np.diff(y) > 0) or y[-1] < 0:
            raise InvariantError("coordinate update broke monotonicity")
        f_new = _objective(problem, y, kappa)
        history.append(f_new)
        if f_old - f_new <= rtol * abs(f_new):
            return y, sweep, True, history
        f_old = f_new
    return y, max_sweeps, False, history


def minimise(
    problem: DiscreteProblem,
    init=None,
    rtol: float = 1e-12,
    max_sweeps: int = 100_000,
    coarse_levels: int = 4,
    omega=None,
) -> MinimiseResult:
    """Projected coordinate descent on the discrete objective.

    Each sweep updates odd then even nodes by over-relaxed exact line
    minimisation inside their neighbours' bounds (the final node is free in
    ``[0, Y_{n-1}]``), then moves runs of tied nodes as blocks. A damped
    Newton step over those blocks precedes every sweep; the stopping rule
    only looks at the decrease achieved by a full sweep.
    The run starts on a grid ``2^coarse_levels`` times coarser and
    interpolates each solution onto the next finer grid. ``init`` defaults
    to a straight line to zero at ``T``. Non-convergence within
    ``max_sweeps`` is reported through ``converged``.
    """
    n = problem.n_steps
    if problem.y0 == 0:
        return MinimiseResult(np.zeros(n + 1), 0.0, 0, True)
    if init is None:
        init = problem.y0 * (1.0 - np.linspace(0.0, 1.0, n + 1))
    y = np.array(init, dtype=float)
    _check_path(problem, y)
    kappa = TabulatedKappa(problem.kf, problem.y0)
    levels = []
    m = n
    for _ in range(coarse_levels):
        m = -(-m // 2)
        if m < 8:
            break
        levels.append(m)
    levels = levels[::-1] + [n]
    t_fine = problem.times
    cur_t, cur_y = t_fine, y
    total = 0
    for m in levels:
        sub = DiscreteProblem(problem.kf, problem.impact, problem.y0, problem.T, m)
        ym = np.interp(sub.times, cur_t, cur_y)
        ym[0] = problem.y0
        ym = np.minimum.accumulate(ym)
        tol = rtol if m == n else max(rtol, 1e-10)
        w = _relaxation(sub, ym, kappa) if omega is None else omega
        ym, sweeps, ok, hist = _descend(sub, ym, kappa, tol, max_sweeps, w)
        total += sweeps
        cur_t, cur_y = sub.times, ym
    value = discrete_objective(problem, cur_y)
    return MinimiseResult(cur_y, value, total, ok, hist)
