"""Driving Lévy models and the scaled cumulant ``kappa_A(y) = kappa(-A y)``.

Three model kinds are supported:

* :class:`BrownianLinear` -- ``L_t = mu t + sigma W_t``.
* :class:`VGExponentialLinearised` -- the linear approximation
  ``s_tilde (1 + L_hat)`` of an exponential variance-gamma price. Its
  cumulant is evaluated by quadrature in ``z = ln(1 + x)`` coordinates.
* :class:`GenericTriplet` -- drift, volatility and a user-supplied Lévy
  density, with the jump integral done by adaptive quadrature.

The cumulants of the linearised VG model explode like ``exp(A s_tilde y)``
for large positions, so every model exposes ``log_kappa_A`` in addition to
``kappa_A``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Tuple

import numpy as np
from scipy import integrate

from ._numerics import gauss_legendre, logsumexp_rows
from .errors import AdmissibilityError, DegeneracyError, DomainError, QuadratureError

__all__ = [
    "LevyModel",
    "BrownianLinear",
    "VarianceGamma",
    "VGExponentialLinearised",
    "GenericTriplet",
    "KappaFunction",
    "kappa_A",
    "vg_kappa_tilde",
    "linearise_exp_levy",
    "vg_kappa_hat",
    "vg_kappa_hat_lower_bound",
    "vg_log_kappa_hat_lower_bound",
    "bm_match_moments",
    "vg_levy_density",
    "vg_nu_hat_density",
]


def _out(x, template):
    x = np.asarray(x, dtype=float)
    return float(x) if np.ndim(template) == 0 else x


class LevyModel:
    """Common interface.

    ``mu`` is the mean drift of ``L_1`` (fully compensated jumps),
    ``delta_bar`` the lower abscissa of exponential-moment finiteness.
    """

    mu: float
    delta_bar: float = -math.inf

    def log_kappa_A(self, A: float, y):
        raise NotImplementedError

    def kappa_A(self, A: float, y):
        with np.errstate(over="ignore"):
            return np.exp(self.log_kappa_A(A, y))

    def jump_second_moment(self) -> float:
        """``∫ x^2 nu(dx)`` of the jump part (0 without jumps)."""
        return 0.0


@dataclass(frozen=True)
class BrownianLinear(LevyModel):
    """Arithmetic Brownian motion with drift ``mu`` and volatility ``sigma``."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)) or self.sigma < 0:
            raise DomainError(f"BrownianLinear needs finite mu and sigma >= 0 (got {self.mu}, {self.sigma})")
        if self.sigma == 0:
            raise DegeneracyError("BrownianLinear with sigma = 0 has no randomness")

    @property
    def delta_bar(self) -> float:
        return -math.inf

    def kappa_A(self, A, y):
        y = np.asarray(y, dtype=float)
        return _out(-A * self.mu * y + 0.5 * (A * self.sigma * y) ** 2, y)

    def log_kappa_A(self, A, y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            # factor y out so the two terms never cancel catastrophically when mu <= 0
            out = np.log(y) + np.log(A) + np.log(-self.mu + 0.5 * A * self.sigma**2 * y)
        return _out(np.where(y == 0, -np.inf, out), y)


@dataclass(frozen=True)
class VarianceGamma:
    """Variance-gamma log-price ``theta T_t + rho W_{T_t}`` with gamma clock of variance rate ``eta``."""

    theta: float
    rho: float
    eta: float

    def __post_init__(self):
        if not (self.rho > 0 and self.eta > 0 and math.isfinite(self.theta)):
            raise DomainError("VarianceGamma needs rho > 0, eta > 0, finite theta")

    @property
    def C(self) -> float:
        return self.theta / self.rho**2

    @property
    def D(self) -> float:
        return math.sqrt(self.theta**2 + 2.0 * self.rho**2 / self.eta) / self.rho**2

    def cumulant(self, x):
        return vg_kappa_tilde(self.theta, self.rho, self.eta, x)


def vg_kappa_tilde(theta: float, rho: float, eta: float, x):
    """Cumulant generating function of the VG log-price at ``x``."""
    x = np.asarray(x, dtype=float)
    arg = 1.0 - 0.5 * x * x * rho * rho * eta - theta * eta * x
    if np.any(arg <= 0):
        raise DomainError("VG cumulant undefined: 1 - x^2 rho^2 eta/2 - theta eta x <= 0")
    return _out(-np.log(arg) / eta, x)


def vg_levy_density(C: float, D: float, eta: float, z):
    """Lévy density ``exp(C z - D |z|) / (eta |z|)`` of the VG log-price."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return _out(np.exp(C * z - D * np.abs(z)) / (eta * np.abs(z)), z)


def vg_nu_hat_density(C: float, D: float, eta: float, x):
    """Density of the linearised jump measure on ``(-1, inf) minus {0}``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= -1):
        raise DomainError("linearised jump sizes live on (-1, inf)")
    with np.errstate(divide="ignore", invalid="ignore"):
        lg = np.log1p(x)
        pos = (x + 1.0) ** (C - D - 1.0) / (eta * lg)
        neg = -((x + 1.0) ** (C + D - 1.0)) / (eta * lg)
    return _out(np.where(x > 0, pos, neg), x)


# -- log-space quadrature for the linearised VG cumulant ------------------------------

_SERIES_COEF = np.array([2.0 / math.factorial(j + 2) for j in range(10)])


def _log_phi(w):
    """``log(exp(-w) - 1 + w)`` without cancellation; ``-inf`` at ``w = 0``."""
    w = np.asarray(w, dtype=float)
    out = np.empty_like(w)
    aw = np.abs(w)
    small = aw < 0.1
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ws = -w[small]
        poly = np.full(ws.shape, _SERIES_COEF[-1])
        for c in _SERIES_COEF[-2::-1]:
            poly = poly * ws + c
        out[small] = 2.0 * np.log(aw[small]) - math.log(2.0) + np.log(poly)
        neg = ~small & (w < 0)
        an = aw[neg]
        out[neg] = an + np.log1p(-(1.0 + an) * np.exp(-an))
        pos = ~small & (w > 0)
        wp = w[pos]
        out[pos] = np.log(np.expm1(-wp) + wp)
    return out


def _side_edges(zmax: float, ratio: float, hmax: float, zmin: float = 1e-12) -> np.ndarray:
    """Breakpoints 0 < zmin < ... < zmax: geometric near 0, capped width beyond.

    With ``zmin >= 1`` the window is away from the origin and gets uniform
    panels on ``[zmin, zmax]`` only.
    """
    if zmin >= 1.0:
        n = max(1, int(math.ceil((zmax - zmin) / hmax)))
        return np.linspace(zmin, zmax, n + 1)
    # geometric up to where the step reaches hmax, uniform afterwards
    z_switch = min(hmax / (ratio - 1.0), zmax)
    n_geo = max(1, int(math.ceil(math.log(z_switch / zmin) / math.log(ratio))))
    geo = np.geomspace(zmin, z_switch, n_geo + 1)
    n_uni = int(math.ceil((zmax - z_switch) / hmax))
    uni = np.linspace(z_switch, zmax, n_uni + 1)[1:] if n_uni > 0 else np.empty(0)
    return np.concatenate([[0.0], geo, uni])


@lru_cache(maxsize=64)
def _peak_window(k: float) -> float:
    """``d > 0`` with ``k (e^d - 1 - d) = 46``.

    Right of the peak the log-integrand drops like ``k (e^d - 1 - d)``; past
    this offset the stretch up to ``z = 0`` is negligible.
    """
    d = 2.0
    for _ in range(100):
        step = (math.expm1(d) - d - 46.0 / k) / math.expm1(d)
        d -= step
        if abs(step) < 1e-15:
            break
    return d


@dataclass
class _VGQuadSettings:
    rtol: float = 1e-10
    atol: float = 1e-14
    ratio: float = 2.0
    width_factor: float = 4.0
    max_nodes: int = 2**18
    orders: Tuple[int, int] = (10, 16)
    chunk: int = 64


_DEFAULT_QUAD = _VGQuadSettings()


def _vg_log_jump_integral(a: np.ndarray, C: float, D: float, eta: float, q: _VGQuadSettings = _DEFAULT_QUAD):
    """``log ∫ phi(a(e^z - 1)) e^{Cz - D|z|} / (eta |z|) dz`` for each ``a > 0``.

    Returns ``(log_value, log_abs_error)``. Each side of ``z = 0`` uses a mesh
    graded geometrically towards 0 (which resolves the kink of ``phi`` at
    ``|z| ~ 1/a``) with panel widths capped by the exponential decay scale.
    Two Gauss-Legendre orders on the same panels give the error estimate;
    rows that miss the tolerance are rerun on a mesh with half the widths.
    """
    a = np.asarray(a, dtype=float)
    k_left = C + D
    k_right = D - C - 1.0
    log_val = np.full(a.shape, np.nan)
    log_err = np.full(a.shape, np.nan)

    # left cutoff: the log-integrand peaks near a - k + k ln(k/a) for a > k and
    # behaves like a + k z far out, so it is 46 below the peak at this distance
    with np.errstate(divide="ignore"):
        zl = np.where(a > k_left, 1.0 + np.log(np.maximum(a, 1e-300) / k_left), a / k_left) + 46.0 / k_left
    zr = 50.0 / k_right
    d = _peak_window(k_left)
    with np.errstate(divide="ignore"):
        z_near = np.where(a > k_left, np.log(np.maximum(a, 1e-300) / k_left) - d, 0.0)

    todo = np.arange(a.size)
    level = 0
    while todo.size:
        ratio = q.ratio ** (0.5**level)
        hl = q.width_factor / k_left / 2**level
        hr = q.width_factor / (D - C) / 2**level
        # per-row cutoffs differ; group rows whose left cutoffs are similar
        order = todo[np.argsort(zl[todo])]
        failed = []
        for start in range(0, order.size, q.chunk):
            rows = order[start : start + q.chunk]
            # below zmin the integrand is ~a^2 z / (2 eta): relative share ~(zmin k)^2
            zmin = 1e-7 / max(float(a[rows].max()), k_left)
            near = float(z_near[rows].min())
            e_left = _side_edges(float(zl[rows].max()), ratio, hl, near if near > 1.0 else zmin)
            e_right = _side_edges(zr, ratio, hr, zmin)
            n_nodes = (e_left.size + e_right.size) * sum(q.orders)
            if n_nodes > q.max_nodes:
                raise QuadratureError(
                    "linearised VG cumulant quadrature did not converge",
                    {"a": a[rows].tolist(), "nodes": n_nodes, "level": level},
                )
            ests = []
            for n in q.orders:
                gx, gw = gauss_legendre(n)
                parts = []
                for edges, sign, rate in ((e_left, -1.0, k_left), (e_right, 1.0, -(D - C))):
                    lo = edges[:-1, None]
                    wid = np.diff(edges)[:, None]
                    t = (lo + wid * gx).ravel()
                    lw = np.log((wid * gw).ravel())
                    z = sign * t
                    w = a[rows, None] * np.expm1(z)[None, :]
                    lf = _log_phi(w) + (rate * -t if sign < 0 else rate * t) - np.log(eta * t)
                    parts.append(logsumexp_rows(lf + lw))
                ests.append(np.logaddexp(parts[0], parts[1]))
            lo_est, hi_est = ests
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                lerr = hi_est + np.log(np.abs(np.expm1(lo_est - hi_est)))
            # terms of size ~a in the log-integrand carry rounding ~eps*a, so
            # agreement at the resolution of log I itself is the best possible
            ok = (
                (lerr <= math.log(q.rtol) + hi_est)
                | (lerr <= math.log(q.atol))
                | (np.abs(lo_est - hi_est) <= 100.0 * np.finfo(float).eps * np.abs(hi_est))
            )
            log_val[rows] = hi_est
            log_err[rows] = lerr
            failed.extend(rows[~ok].tolist())
        todo = np.asarray(failed, dtype=int)
        level += 1
    return log_val, log_err


def _vg_log_kappa_hat(a, C, D, eta, m_tilde):
    """``log(-a m + I(a))`` where ``I`` is the jump integral."""
    a = np.asarray(a, dtype=float)
    flat = a.ravel()
    out = np.full(flat.shape, -np.inf)
    out[flat == np.inf] = np.inf
    pos = (flat > 0) & (flat < np.inf)
    if pos.any():
        li, _ = _vg_log_jump_integral(flat[pos], C, D, eta)
        with np.errstate(divide="ignore", invalid="ignore"):
            if m_tilde < 0:
                out[pos] = np.logaddexp(np.log(-m_tilde * flat[pos]), li)
            elif m_tilde == 0:
                out[pos] = li
            else:
                out[pos] = li + np.log1p(-m_tilde * flat[pos] * np.exp(-li))
    return out.reshape(a.shape)


@dataclass(frozen=True)
class VGExponentialLinearised(LevyModel):
    """Linearised exponential VG model ``L = s_tilde * L_hat``.

    ``L_hat`` has drift ``m_tilde = kappa_tilde(1)`` and jump density
    ``nu_hat``; position-space arguments enter through ``A_tilde = A s_tilde``.
    Requires ``D - C > 2``.
    """

    theta: float
    rho: float
    eta: float
    s_tilde: float = 100.0

    def __post_init__(self):
        vg = VarianceGamma(self.theta, self.rho, self.eta)
        if not (self.s_tilde > 0 and math.isfinite(self.s_tilde)):
            raise DomainError("s_tilde must be positive")
        if not vg.D - vg.C > 2.0:
            raise AdmissibilityError(f"VG parameters need D - C > 2 (got {vg.D - vg.C:.6g})")

    @property
    def C(self) -> float:
        return self.theta / self.rho**2

    @property
    def D(self) -> float:
        return math.sqrt(self.theta**2 + 2.0 * self.rho**2 / self.eta) / self.rho**2

    @property
    def m_tilde(self) -> float:
        return float(vg_kappa_tilde(self.theta, self.rho, self.eta, 1.0))

    @property
    def mu(self) -> float:
        return self.s_tilde * self.m_tilde

    @property
    def delta_bar(self) -> float:
        return -math.inf

    def log_kappa_A(self, A, y):
        y = np.asarray(y, dtype=float)
        return _out(_vg_log_kappa_hat(A * self.s_tilde * y, self.C, self.D, self.eta, self.m_tilde), y)

    def kappa_A(self, A, y):
        y = np.asarray(y, dtype=float)
        if self.m_tilde > 0:
            a = A * self.s_tilde * y
            li = np.full(a.shape, -np.inf)
            pos = a > 0
            if pos.any():
                li[pos] = _vg_log_jump_integral(a[pos], self.C, self.D, self.eta)[0]
            with np.errstate(over="ignore"):
                return _out(np.exp(li) - self.m_tilde * a, y)
        with np.errstate(over="ignore"):
            return _out(np.exp(self.log_kappa_A(A, y)), y)

    def jump_second_moment(self) -> float:
        """``∫ x^2 nu(dx)`` for the jumps ``s_tilde (e^z - 1)``, from the VG cumulant."""
        k1 = vg_kappa_tilde(self.theta, self.rho, self.eta, 1.0)
        k2 = vg_kappa_tilde(self.theta, self.rho, self.eta, 2.0)
        # ∫ (e^z - 1)^2 nu_tilde = kappa(2) - 2 kappa(1) for a pure-jump log-price
        return self.s_tilde**2 * float(k2 - 2.0 * k1)


@dataclass(frozen=True)
class GenericTriplet(LevyModel):
    """Drift (mean of ``L_1``), volatility and Lévy density on ``support``.

    ``delta_bar`` must be supplied by the modeller: it is not inferred from
    the density tails.
    """

    mu: float
    sigma: float
    levy_density: Callable[[float], float]
    support: Tuple[float, float] = (-math.inf, math.inf)
    delta_bar: float = -math.inf
    quad_epsabs: float = 1e-13
    quad_epsrel: float = 1e-10

    def __post_init__(self):
        if self.sigma < 0 or not math.isfinite(self.mu):
            raise DomainError("GenericTriplet needs finite mu and sigma >= 0")
        if not self.delta_bar < 0:
            raise DomainError("delta_bar must be negative (or -inf)")
        if self.sigma == 0 and self.jump_second_moment() == 0:
            raise DegeneracyError("GenericTriplet with sigma = 0 and no jumps is trivial")

    def _pieces(self):
        lo, hi = self.support
        out = []
        if lo < 0:
            out.append((lo, min(hi, 0.0)))
        if hi > 0:
            out.append((max(lo, 0.0), hi))
        return out

    def _integral(self, g):
        total = 0.0
        for lo, hi in self._pieces():
            v, err = integrate.quad(
                lambda x: g(x) * self.levy_density(x), lo, hi,
                epsabs=self.quad_epsabs, epsrel=self.quad_epsrel, limit=500,
            )
            total += v
        return total

    def jump_second_moment(self) -> float:
        return self._integral(lambda x: x * x)

    def kappa_A(self, A, y):
        y = np.asarray(y, dtype=float)
        flat = y.ravel()
        out = np.empty(flat.shape)
        for i, yi in enumerate(flat):
            b = A * yi
            jump = self._integral(lambda x: math.expm1(-b * x) + b * x) if b > 0 else 0.0
            out[i] = -self.mu * b + 0.5 * (self.sigma * b) ** 2 + jump
        return _out(out.reshape(y.shape), y)

    def log_kappa_A(self, A, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(self.kappa_A(A, y))


def linearise_exp_levy(tilde_model, s_tilde: float) -> LevyModel:
    """Linear approximation ``s_tilde (1 + L_hat)`` of ``s_tilde exp(L_tilde)``.

    ``tilde_model`` is the log-price process: a :class:`VarianceGamma`, a
    :class:`BrownianLinear` (drift ``mu_tilde``, volatility ``sigma_tilde``)
    or a :class:`GenericTriplet`. The result drives the arithmetic model with
    mean drift ``s_tilde * m_tilde`` where ``m_tilde = kappa_tilde(1)``.
    """
    if not (s_tilde > 0 and math.isfinite(s_tilde)):
        raise DomainError("s_tilde must be positive")
    if isinstance(tilde_model, VarianceGamma):
        return VGExponentialLinearised(tilde_model.theta, tilde_model.rho, tilde_model.eta, s_tilde)
    if isinstance(tilde_model, BrownianLinear):
        m = tilde_model.mu + 0.5 * tilde_model.sigma**2
        return BrownianLinear(s_tilde * m, s_tilde * tilde_model.sigma)
    if isinstance(tilde_model, GenericTriplet):
        f = tilde_model.levy_density
        big = tilde_model._integral(lambda z: math.expm1(z) ** 2 if z >= 1 else 0.0)
        if not math.isfinite(big):
            raise AdmissibilityError("linearisation needs ∫_{z>=1} e^{2z} nu(dz) < inf")
        m = tilde_model.mu + 0.5 * tilde_model.sigma**2 + tilde_model._integral(lambda z: math.expm1(z) - z)
        lo, hi = tilde_model.support
        new_support = (s_tilde * math.expm1(lo) if lo > -math.inf else -s_tilde, s_tilde * math.expm1(hi) if hi < math.inf else math.inf)

        def density(x, f=f):
            return f(math.log1p(x / s_tilde)) / (s_tilde + x)

        return GenericTriplet(s_tilde * m, s_tilde * tilde_model.sigma, density, new_support, -math.inf)
    raise TypeError(f"cannot linearise {type(tilde_model).__name__}")


@dataclass(frozen=True)
class KappaFunction:
    """``y -> kappa(-A y)`` for a fixed model and risk aversion."""

    model: LevyModel
    A: float
    domain_upper: float = field(init=False)

    def __post_init__(self):
        if not (self.A > 0 and math.isfinite(self.A)):
            raise DomainError(f"risk aversion A must be positive and finite (got {self.A})")
        db = self.model.delta_bar
        object.__setattr__(self, "domain_upper", math.inf if db == -math.inf else -db / self.A)

    @property
    def A_tilde(self) -> float:
        """Internal scale: ``A * s_tilde`` for linearised models, else ``A``."""
        return self.A * getattr(self.model, "s_tilde", 1.0)

    @property
    def drift(self) -> float:
        return self.model.mu

    def _check(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(~np.isfinite(y)) or np.any(y < 0):
            raise DomainError("positions must be finite and >= 0")
        if np.any(y >= self.domain_upper):
            raise DomainError(f"position >= delta_bar_A = {self.domain_upper:.6g}: exponential moment is infinite")
        return y

    def __call__(self, y):
        y = self._check(y)
        return self.model.kappa_A(self.A, y)

    def log(self, y):
        """``log kappa_A(y)``; finite even where ``kappa_A`` overflows."""
        y = self._check(y)
        return self.model.log_kappa_A(self.A, y)


def kappa_A(kf: KappaFunction, y):
    """Scaled cumulant ``kappa(-A y)``."""
    return kf(y)


def _require_vg(kf: KappaFunction) -> VGExponentialLinearised:
    if not isinstance(kf.model, VGExponentialLinearised):
        raise TypeError("expected a KappaFunction over a VGExponentialLinearised model")
    return kf.model


def vg_kappa_hat(kf: KappaFunction, u):
    """Linearised VG cumulant ``-A_tilde m u + ∫ phi(A_tilde u x) nu_hat(dx)``."""
    _require_vg(kf)
    return kf(u)


def _lower_bound_parts(kf: KappaFunction, u):
    """Split the bound for ``a = A_tilde u >= 1`` as ``exp(log_p) + q``; ``small`` covers ``a < 1``."""
    m = _require_vg(kf)
    a = kf.A_tilde * np.asarray(u, dtype=float)
    k = m.C + m.D
    kk = (k + 1.0) * (k + 2.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_p = 1.0 - math.log(m.eta) - math.log(kk) + a - (k + 1.0) * np.log(np.maximum(a, 1.0))
        q = -a * m.m_tilde - math.e / m.eta * (a + k + 2.0) / kk
        # a < 1: bracket = expm1(a)(1/(k+1) - a/(k+2)) - a/(k+1), free of cancellation at small a
        small = -a * m.m_tilde + math.e / m.eta * (np.expm1(a) * (1.0 / (k + 1.0) - a / (k + 2.0)) - a / (k + 1.0))
    return a, log_p, q, small


def vg_log_kappa_hat_lower_bound(kf: KappaFunction, u):
    """Logarithm of :func:`vg_kappa_hat_lower_bound` (``nan`` where the bound is negative)."""
    a, log_p, q, small = _lower_bound_parts(kf, u)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        large = np.where(log_p > 600.0, log_p + np.log1p(q * np.exp(-log_p)), np.log(np.exp(log_p) + q))
        out = np.where(a >= 1.0, large, np.log(small))
    return _out(np.where(a == 0, -np.inf, out), u)


def vg_kappa_hat_lower_bound(kf: KappaFunction, u, branch: str = "auto"):
    """Closed-form lower bound of the linearised VG cumulant.

    ``branch="general"`` evaluates the formula with ``min(1/a, 1)`` powers
    literally, ``"large"`` the simplified form valid for ``a = A_tilde u >= 1``,
    and ``"auto"`` a rearrangement of the two that avoids cancellation.
    """
    m = _require_vg(kf)
    u = np.asarray(u, dtype=float)
    a = kf.A_tilde * u
    k = m.C + m.D
    e_eta = math.e / m.eta
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if branch == "general":
            mm = np.minimum(np.where(a > 0, 1.0 / a, np.inf), 1.0)
            br = (
                -np.exp(a) * a * mm ** (k + 2.0) / (k + 2.0)
                + np.exp(a) * mm ** (k + 1.0) / (k + 1.0)
                + a / (k + 2.0)
                - (1.0 + a) / (k + 1.0)
            )
        elif branch == "large":
            br = a ** (-(k + 1.0)) * np.exp(a) * (1.0 / (k + 1.0) - 1.0 / (k + 2.0)) + a / (k + 2.0) - (1.0 + a) / (k + 1.0)
        elif branch == "auto":
            _, log_p, q, small = _lower_bound_parts(kf, u)
            return _out(np.where(a >= 1.0, np.exp(log_p) + q, small), u)
        else:
            raise ValueError(f"unknown branch {branch!r}")
    return _out(-a * m.m_tilde + e_eta * br, u)


def bm_match_moments(theta: float, rho: float, eta: float) -> Tuple[float, float]:
    """Brownian log-price matching the first two moments of ``exp(L_tilde_t)``.

    Returns ``(mu_tilde, sigma_tilde_sq)`` with ``mu + sigma^2/2 = kappa(1)``
    and ``2 mu + 2 sigma^2 = kappa(2)``.
    """
    k1 = float(vg_kappa_tilde(theta, rho, eta, 1.0))
    k2 = float(vg_kappa_tilde(theta, rho, eta, 2.0))
    s2 = k2 - 2.0 * k1
    if not s2 > 0:
        raise DegeneracyError(f"matched variance kappa(2) - 2 kappa(1) = {s2:.6g} is not positive")
    return 2.0 * k1 - 0.5 * k2, s2
