"""Monte-Carlo evaluation of deterministic liquidation strategies.

Prices follow either an arithmetic Brownian motion or the linearised
exponential VG model. For the latter each step draws a gamma time change
``G`` and a normal ``Z``, forms the VG log-return ``theta G + rho sqrt(G) Z``
and maps it to an arithmetic increment

    dL = s_tilde * (m_tilde dt + (e^{dL_tilde} - 1) - (e^{dt kappa_tilde(1)} - 1)),

which has mean exactly ``s_tilde m_tilde dt``. Paths are split into fixed-size
blocks, each with its own Philox stream keyed by ``(seed, block)``; block
results are always reduced in block order, so reports do not depend on the
number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError
from .impact import ImpactModel
from .levy import BrownianLinear, LevyModel, VGExponentialLinearised, _vg_log_jump_integral, vg_kappa_tilde
from .solver import Trajectory

__all__ = [
    "SimConfig",
    "SimReport",
    "simulate_paths",
    "simulate_levels",
    "terminal_cash",
    "evaluate_strategy",
    "strategy_grid",
    "time_dilated",
    "discrete_moments",
    "jump_correction",
    "sample_gamma_small_shape",
]

# log of the smallest subnormal double, with room for the boosted factor
_LOG_UNDERFLOW = -760.0


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo run description.

    ``strategy`` may be ``None`` for pure price simulation, in which case
    ``horizon`` sets the simulated time span. Positions below
    ``floor_fraction * y0`` count as liquidated.
    """

    model: LevyModel
    impact: Optional[ImpactModel]
    strategy: Optional[Trajectory]
    n_paths: int
    dt: float = 1e-4
    seed: int = 0
    c0: float = 0.0
    s0: float = 100.0
    alpha: float = 0.0
    A: float = 1e-5
    antithetic: bool = False
    horizon: Optional[float] = None
    floor_fraction: float = 1e-9
    block_size: int = 16384
    threads: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise DomainError("dt must be positive")
        if self.n_paths < 1:
            raise DomainError("n_paths must be at least 1")
        if not self.A > 0:
            raise DomainError("risk aversion A must be positive")
        if self.alpha < 0:
            raise DomainError("permanent impact alpha must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        if self.block_size < 2 or self.block_size % 2:
            raise DomainError("block_size must be an even number >= 2")
        if self.antithetic and self.n_paths % 2:
            raise DomainError("antithetic sampling needs an even number of paths")
        if not isinstance(self.model, (BrownianLinear, VGExponentialLinearised)):
            raise DomainError(f"cannot simulate {type(self.model).__name__}")
        if self.strategy is None:
            if self.horizon is None or not self.horizon > 0:
                raise DomainError("a positive horizon is needed when no strategy is given")
        else:
            if self.impact is None:
                raise DomainError("an impact model is needed to evaluate a strategy")
            if np.any(np.diff(self.strategy.positions) > 0):
                raise DomainError("strategy must be non-increasing")


@dataclass(frozen=True)
class SimReport:
    """Sample estimates with standard errors (``se_*``).

    ``log_neg_expected_utility`` is ``log(-E[U])``, kept because ``E[U]``
    itself under- or overflows easily.
    """

    n_paths: int
    mean_cash: float
    var_cash: float
    expected_utility: float
    log_neg_expected_utility: float
    certainty_equivalent: float
    mean_variance_score: float
    se_mean_cash: float
    se_var_cash: float
    se_expected_utility: float
    se_certainty_equivalent: float
    se_mean_variance_score: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


# -- samplers ------------------------------------------------------------------------


def sample_gamma_small_shape(rng: np.random.Generator, shape: float, n: int):
    """Gamma(shape, 1) variates for ``shape < 1`` via ``Gamma(shape + 1) U^(1/shape)``.

    The boosted variate comes from numpy's squeeze-rejection sampler, which
    is valid for shape >= 1. For tiny shapes ``U^(1/shape)`` underflows to
    zero for most draws; those entries are returned as exact zeros without
    drawing the boosted factor. Returns ``(values, index)``: the variates at
    positions ``index`` and zero elsewhere.
    """
    if not 0 < shape < 1:
        raise DomainError(f"gamma shape must lie in (0, 1) (got {shape})")
    u = rng.random(n)
    idx = np.flatnonzero(u > math.exp(_LOG_UNDERFLOW * shape))
    g = rng.standard_gamma(shape + 1.0, idx.size) * np.exp(np.log(u[idx]) / shape)
    return g, idx


class _BMSampler:
    def __init__(self, model: BrownianLinear, dt: float):
        self.drift = model.mu * dt
        self.scale = model.sigma * math.sqrt(dt)

    def draw(self, rng, n: int, antithetic: bool):
        if antithetic:
            z = rng.standard_normal(n // 2)
            z = np.concatenate([z, -z])
        else:
            z = rng.standard_normal(n)
        return self.drift + self.scale * z


class _VGSampler:
    def __init__(self, model: VGExponentialLinearised, dt: float):
        self.theta, self.rho, self.eta, self.s = model.theta, model.rho, model.eta, model.s_tilde
        self.shape = dt / model.eta
        if not self.shape < 1:
            raise DomainError("VG simulation needs dt < eta")
        k1 = float(vg_kappa_tilde(model.theta, model.rho, model.eta, 1.0))
        self.const = model.m_tilde * dt - math.expm1(dt * k1)

    def draw(self, rng, n: int, antithetic: bool):
        half = n // 2 if antithetic else n
        g, idx = sample_gamma_small_shape(rng, self.shape, half)
        g = self.eta * g
        z = self.rho * np.sqrt(g) * rng.standard_normal(g.size)
        out = np.full(n, self.s * self.const)
        out[idx] += self.s * np.expm1(self.theta * g + z)
        if antithetic:
            out[idx + half] += self.s * np.expm1(self.theta * g - z)
        return out


def _sampler(cfg: SimConfig):
    if isinstance(cfg.model, BrownianLinear):
        return _BMSampler(cfg.model, cfg.dt)
    return _VGSampler(cfg.model, cfg.dt)


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _blocks(cfg: SimConfig):
    n_blocks = -(-cfg.n_paths // cfg.block_size)
    sizes = [cfg.block_size] * n_blocks
    sizes[-1] = cfg.n_paths - cfg.block_size * (n_blocks - 1)
    return list(enumerate(sizes))


def _map_blocks(cfg: SimConfig, fn):
    blocks = _blocks(cfg)
    if cfg.threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as ex:
            parts = list(ex.map(lambda bs: fn(*bs), blocks))
    else:
        parts = [fn(b, s) for b, s in blocks]
    return np.concatenate(parts, axis=0)


# -- strategy on the simulation grid ----------------------------------------------------


def time_dilated(strategy: Trajectory, factor: float) -> Trajectory:
    """``t -> Y(t / factor)``: the same path run ``factor`` times slower."""
    if not factor > 0:
        raise DomainError("dilation factor must be positive")
    return Trajectory(strategy.times * factor, strategy.positions, strategy.tau * factor, strategy.truncated, strategy.floor)


def _n_steps(cfg: SimConfig) -> int:
    if cfg.strategy is None:
        return max(1, int(math.ceil(cfg.horizon / cfg.dt - 1e-9)))
    s = cfg.strategy
    y0 = s.y0
    if y0 == 0:
        return 1
    if math.isfinite(s.tau):
        end = s.tau
    else:
        below = np.nonzero(s.positions <= cfg.floor_fraction * y0)[0]
        end = s.times[below[0]] if below.size else s.times[-1]
    return max(1, int(math.ceil(end / cfg.dt - 1e-9)))


def strategy_grid(cfg: SimConfig) -> np.ndarray:
    """Positions ``Y_k`` at ``t_k = k dt``, ending with an exact zero."""
    if cfg.strategy is None:
        raise DomainError("no strategy configured")
    n = _n_steps(cfg)
    y = cfg.strategy.interpolate(np.arange(n + 1) * cfg.dt)
    y[0] = cfg.strategy.y0
    y[-1] = 0.0
    y = np.minimum.accumulate(y)
    y[y < cfg.floor_fraction * cfg.strategy.y0] = 0.0
    return y


def _deterministic_cash(cfg: SimConfig, y: np.ndarray) -> float:
    """Initial mark-to-market minus permanent and temporary impact costs."""
    y0 = y[0]
    xi = -np.diff(y) / cfg.dt
    cost = float(np.sum(xi * np.asarray(cfg.impact.F(xi), dtype=float)) * cfg.dt)
    return cfg.c0 + cfg.s0 * y0 - 0.5 * cfg.alpha * y0**2 - cost


# -- public operations -----------------------------------------------------------------


def simulate_paths(cfg: SimConfig) -> np.ndarray:
    """Increments of ``L`` on the step grid, shape ``(n_paths, n_steps)``.

    Uses the same streams as :func:`evaluate_strategy`, so feeding the result
    to :func:`terminal_cash` reproduces its cash values bit for bit. Memory
    grows with ``n_paths * n_steps``; prefer :func:`simulate_levels` or
    :func:`evaluate_strategy` for large runs.
    """
    n_steps = _n_steps(cfg)
    sampler = _sampler(cfg)

    def block(b, size):
        rng = _block_rng(cfg.seed, b)
        out = np.empty((size, n_steps))
        for k in range(n_steps):
            out[:, k] = sampler.draw(rng, size, cfg.antithetic)
        return out

    return _map_blocks(cfg, block)


def simulate_levels(cfg: SimConfig) -> np.ndarray:
    """``L`` at the end of the step grid, per path, without storing paths."""
    n_steps = _n_steps(cfg)
    sampler = _sampler(cfg)

    def block(b, size):
        rng = _block_rng(cfg.seed, b)
        acc = np.zeros(size)
        for _ in range(n_steps):
            acc += sampler.draw(rng, size, cfg.antithetic)
        return acc

    return _map_blocks(cfg, block)


def terminal_cash(cfg: SimConfig, path: np.ndarray) -> np.ndarray:
    """Terminal cash for given increments (one row per path, one column per step).

    ``c0 + s0 y0 - alpha y0^2/2 + sum Y_{k} dL_k - sum xi_k F(xi_k) dt``.
    """
    y = strategy_grid(cfg)
    path = np.atleast_2d(np.asarray(path, dtype=float))
    if path.shape[1] != y.size - 1:
        raise DomainError(f"path has {path.shape[1]} steps but the strategy grid has {y.size - 1}")
    gains = np.zeros(path.shape[0])
    for k in range(path.shape[1]):
        gains += y[k] * path[:, k]
    return _deterministic_cash(cfg, y) + gains


def _cash_samples(cfg: SimConfig) -> np.ndarray:
    y = strategy_grid(cfg)
    base = _deterministic_cash(cfg, y)
    sampler = _sampler(cfg)

    def block(b, size):
        rng = _block_rng(cfg.seed, b)
        gains = np.zeros(size)
        for k in range(y.size - 1):
            gains += y[k] * sampler.draw(rng, size, cfg.antithetic)
        return base + gains

    return _map_blocks(cfg, block)


def summarise(cash: np.ndarray, A: float, antithetic: bool = False) -> SimReport:
    """Moments, utility and certainty equivalent of cash samples.

    Standard errors come from the delta method; with antithetic sampling
    they are computed on pair averages, which are the independent units.
    """
    c = np.asarray(cash, dtype=float)
    n = c.size
    m = float(np.mean(c))
    v = float(np.var(c, ddof=1)) if n > 1 else 0.0
    l = -A * (c - m)
    top = float(np.max(l))
    w = np.exp(l - top)
    mw = float(np.mean(w))
    lme = top + math.log(mw)
    log_neg_eu = -A * m + lme
    ce = m - lme / A
    mv = m - 0.5 * A * v

    def se(x):
        x = np.asarray(x, dtype=float)
        if antithetic:
            x = 0.5 * (x[: n // 2] + x[n // 2:])
        k = x.size
        return float(np.std(x, ddof=1) / math.sqrt(k)) if k > 1 else math.nan

    se_ce = se(w) / mw / A
    eu = -math.exp(log_neg_eu) if log_neg_eu < 709.0 else -math.inf
    return SimReport(
        n_paths=n,
        mean_cash=m,
        var_cash=v,
        expected_utility=eu,
        log_neg_expected_utility=log_neg_eu,
        certainty_equivalent=ce,
        mean_variance_score=mv,
        se_mean_cash=se(c),
        se_var_cash=se((c - m) ** 2),
        se_expected_utility=abs(eu) * se(w) / mw,
        se_certainty_equivalent=se_ce,
        se_mean_variance_score=se(c - 0.5 * A * (c - m) ** 2),
    )


def evaluate_strategy(cfg: SimConfig) -> SimReport:
    """Monte-Carlo report for ``cfg.strategy`` under ``U(x) = -exp(-A x)``."""
    if cfg.strategy is None:
        raise DomainError("no strategy configured")
    cash = _cash_samples(cfg)
    if cfg.antithetic:
        cash = _pair_order(cfg, cash)
    return summarise(cash, cfg.A, cfg.antithetic)


def _pair_order(cfg: SimConfig, cash: np.ndarray) -> np.ndarray:
    """Reorder antithetic samples to ``[all first members, all partners]``."""
    first, second = [], []
    start = 0
    for _, size in _blocks(cfg):
        h = size // 2
        first.append(cash[start:start + h])
        second.append(cash[start + h:start + size])
        start += size
    return np.concatenate(first + second)


# -- closed forms for the discrete scheme ------------------------------------------------


def _step_moments(model: LevyModel, dt: float):
    """Mean and variance of one simulated increment."""
    if isinstance(model, BrownianLinear):
        return model.mu * dt, model.sigma**2 * dt
    k1 = float(vg_kappa_tilde(model.theta, model.rho, model.eta, 1.0))
    k2 = float(vg_kappa_tilde(model.theta, model.rho, model.eta, 2.0))
    var_hat = math.exp(dt * k2) - math.exp(2.0 * dt * k1)
    return model.mu * dt, model.s_tilde**2 * var_hat


def discrete_moments(cfg: SimConfig):
    """Exact mean and variance of the simulated terminal cash.

    Returns ``(mean, variance, mean - A variance / 2)``. For Brownian prices
    the last entry is also the exact certainty equivalent.
    """
    y = strategy_grid(cfg)
    m1, v1 = _step_moments(cfg.model, cfg.dt)
    yk = y[:-1]
    mean = _deterministic_cash(cfg, y) + m1 * float(np.sum(yk))
    var = v1 * float(np.sum(yk * yk))
    return mean, var, mean - 0.5 * cfg.A * var


def jump_correction(model: LevyModel, A: float, positions, dt: float) -> float:
    """``sum_k dt ∫ (e^{-A Y_k x} - 1 + A Y_k x - (A Y_k x)^2 / 2) nu(dx)``.

    The certainty equivalent equals ``E - A Var / 2 - J / A`` with ``J`` this
    value; it vanishes for Brownian prices.
    """
    if isinstance(model, BrownianLinear):
        return 0.0
    if not isinstance(model, VGExponentialLinearised):
        raise DomainError(f"no jump correction for {type(model).__name__}")
    y = np.asarray(positions, dtype=float)
    a = A * model.s_tilde * y[y > 0]
    if a.size == 0:
        return 0.0
    m2 = float(vg_kappa_tilde(model.theta, model.rho, model.eta, 2.0) - 2.0 * vg_kappa_tilde(model.theta, model.rho, model.eta, 1.0))
    full = np.exp(_vg_log_jump_integral(a, model.C, model.D, model.eta)[0])
    return float(dt * np.sum(full - 0.5 * a * a * m2))
