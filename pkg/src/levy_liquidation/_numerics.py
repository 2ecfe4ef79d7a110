"""Quadrature rules and a vectorised bracketed root solver."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the n-point Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_nodes(edges, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights over consecutive panels.

    ``edges`` may be decreasing; weights then carry the sign of the panel
    length so that ``sum(w * f(x))`` is the oriented integral.
    """
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(n)
    lo = edges[:-1, None]
    width = np.diff(edges)[:, None]
    return (lo + width * x).ravel(), (width * w).ravel()


def panel_integrals(f, edges, n: int = 8) -> np.ndarray:
    """Integral of ``f`` over each panel [edges[k], edges[k+1]] (oriented)."""
    edges = np.asarray(edges, dtype=float)
    nodes, weights = composite_nodes(edges, n)
    vals = np.asarray(f(nodes), dtype=float)
    return (weights * vals).reshape(len(edges) - 1, n).sum(axis=1)


def geometric_edges(lo: float, hi: float, ratio: float, max_width: float = np.inf) -> np.ndarray:
    """Increasing breakpoints from lo to hi, growing by ``ratio`` up to ``max_width`` per panel."""
    edges = [lo]
    x = lo
    while x < hi:
        step = min(x * (ratio - 1.0), max_width)
        x = min(x + step, hi)
        if hi - x < 0.25 * step:
            x = hi
        edges.append(x)
    return np.asarray(edges)


def solve_increasing(f, lo, hi, flo=None, fhi=None, xtol=1e-14, maxiter=200):
    """Elementwise root of increasing ``f`` on brackets [lo, hi] with f(lo) <= 0 <= f(hi).

    ``f(x, idx)`` receives trial abscissae for the elements ``idx`` (integer
    indices into the bracket arrays) and returns values of the same shape.
    Illinois-modified regula falsi, with a bisection step whenever an
    iterate fails to halve the bracket. Convergence is declared per element
    once ``hi - lo <= xtol * (1 + |x|)``.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    every = np.arange(lo.size)
    flo = np.asarray(f(lo, every) if flo is None else flo, dtype=float).copy()
    fhi = np.asarray(f(hi, every) if fhi is None else fhi, dtype=float).copy()
    if np.any(flo > 0) or np.any(fhi < 0):
        raise ValueError("root is not bracketed")
    x = np.where(flo == 0, lo, hi)
    done = (flo == 0) | (fhi == 0)
    side = np.zeros(lo.shape, dtype=int)
    bisect = np.zeros(lo.shape, dtype=bool)
    for _ in range(maxiter):
        act = ~done & (hi - lo > xtol * (1.0 + np.abs(lo) + np.abs(hi)) * 0.5)
        if not act.any():
            break
        a, b, fa, fb = lo[act], hi[act], flo[act], fhi[act]
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            xs = b - fb * (b - a) / (fb - fa)
        mid = 0.5 * (a + b)
        ok = np.isfinite(xs) & (xs > a) & (xs < b) & ~bisect[act]
        xn = np.where(ok, xs, mid)
        fx = np.asarray(f(xn, np.nonzero(act)[0]), dtype=float)
        width_old = b - a
        left = fx < 0
        right = fx > 0
        exact = fx == 0
        # move brackets
        a2 = np.where(left, xn, a)
        b2 = np.where(right, xn, b)
        fa2 = np.where(left, fx, fa)
        fb2 = np.where(right, fx, fb)
        # Illinois: halve the stale endpoint's value when the same side moves twice
        s_old = side[act]
        s_new = np.where(left, -1, np.where(right, 1, 0))
        fb2 = np.where(left & (s_old == -1), 0.5 * fb2, fb2)
        fa2 = np.where(right & (s_old == 1), 0.5 * fa2, fa2)
        lo[act], hi[act], flo[act], fhi[act] = a2, b2, fa2, fb2
        side[act] = s_new
        bisect[act] = (b2 - a2) > 0.5 * width_old
        x[act] = xn
        done[act] = exact
    rest = ~done
    x[rest] = 0.5 * (lo[rest] + hi[rest])
    return x


def log_panel_integrals(log_f, lo, hi, rtol: float = 1e-12, order: int = 8, max_depth: int = 48):
    """Logarithms of ``∫ exp(log_f)`` over each panel ``[lo[i], hi[i]]`` (``lo < hi``).

    Each panel is compared against the sum over its two halves and bisected
    until the two agree to ``rtol``. The integrand is handled in log space, so
    panels whose values overflow a double are still integrated; panels where
    the integrand underflows to zero contribute ``-inf``.
    Returns ``(log_integrals, info)``; ``log_integrals`` is ``None`` when some
    panel is still unresolved at ``max_depth`` and ``info`` then says where.
    """
    gx, gw = gauss_legendre(order)
    lgw = np.log(gw)

    def rule(lo, hi):
        width = (hi - lo)[:, None]
        vals = np.asarray(log_f((lo[:, None] + width * gx).ravel()), dtype=float).reshape(lo.size, order)
        with np.errstate(divide="ignore", invalid="ignore"):
            return logsumexp_rows(vals + lgw + np.log(width))

    lo = np.array(lo, dtype=float, copy=True).ravel()
    hi = np.array(hi, dtype=float, copy=True).ravel()
    n_panels = lo.size
    out = np.full(n_panels, -np.inf)
    owner = np.arange(n_panels)
    whole = rule(lo, hi)
    n_eval = lo.size * order
    for _ in range(max_depth):
        if lo.size == 0:
            break
        mid = 0.5 * (lo + hi)
        left = rule(lo, mid)
        right = rule(mid, hi)
        n_eval += 2 * lo.size * order
        halves = np.logaddexp(left, right)
        with np.errstate(invalid="ignore", over="ignore"):
            rel = np.abs(np.expm1(whole - halves))
        ok = (halves == -np.inf) | (rel <= rtol)
        np.logaddexp.at(out, owner[ok], halves[ok])
        bad = ~ok
        lo, hi = np.concatenate([lo[bad], mid[bad]]), np.concatenate([mid[bad], hi[bad]])
        owner = np.concatenate([owner[bad], owner[bad]])
        whole = np.concatenate([left[bad], right[bad]])
    else:
        if lo.size:
            return None, {"unresolved_panels": int(lo.size), "at": lo[:5].tolist()}
    return out, {"evaluations": n_eval}


def geometric_subpanels(lo, hi, ratio: float):
    """Split each ``[lo[i], hi[i]]`` (``0 < lo < hi``) into geometric pieces of ratio <= ``ratio``.

    Returns ``(sub_lo, sub_hi, owner)``.
    """
    lo = np.asarray(lo, dtype=float).ravel()
    hi = np.asarray(hi, dtype=float).ravel()
    counts = np.maximum(1, np.ceil(np.log(hi / lo) / np.log(ratio) - 1e-9)).astype(int)
    owner = np.repeat(np.arange(lo.size), counts)
    start = np.cumsum(counts) - counts
    j = np.arange(owner.size) - start[owner]
    frac = np.log(hi / lo)[owner] / counts[owner]
    sub_lo = lo[owner] * np.exp(j * frac)
    sub_hi = np.where(j == counts[owner] - 1, hi[owner], lo[owner] * np.exp((j + 1) * frac))
    return sub_lo, sub_hi, owner


def logsumexp_rows(v: np.ndarray) -> np.ndarray:
    """Row-wise log-sum-exp that tolerates all ``-inf`` and ``+inf`` rows."""
    m = np.max(v, axis=1)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        s = np.log(np.sum(np.exp(v - safe[:, None]), axis=1)) + safe
    return np.where(np.isfinite(m), s, m)


_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_min(f, lo, hi, iters: int = 90):
    """Vectorised golden-section minimisation of unimodal ``f`` on [lo, hi].

    ``f`` maps an array of abscissae (one per problem) to values. Returns the
    best abscissa found per problem and its value.
    """
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = np.asarray(f(c), dtype=float)
    fd = np.asarray(f(d), dtype=float)
    for _ in range(iters):
        left = fc <= fd  # minimum in [a, d]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = b - _INV_PHI * (b - a)
        new_d = a + _INV_PHI * (b - a)
        x_new = np.where(left, new_c, new_d)
        f_new = np.asarray(f(x_new), dtype=float)
        c, fc, d, fd = (
            np.where(left, new_c, d),
            np.where(left, f_new, fd),
            np.where(left, c, new_d),
            np.where(left, fc, f_new),
        )
        if np.all(b - a <= 4e-16 * (np.abs(a) + np.abs(b))):
            break
    cand = np.stack([a, b, c, d])
    fa, fb = np.asarray(f(a), dtype=float), np.asarray(f(b), dtype=float)
    vals = np.stack([fa, fb, fc, fd])
    k = np.argmin(vals, axis=0)
    idx = np.arange(a.size)
    return cand[k, idx], vals[k, idx]
