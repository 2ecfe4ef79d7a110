import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from levy_liquidation.errors import DomainError
from levy_liquidation.impact import PowerLaw
from levy_liquidation.levy import BrownianLinear, KappaFunction, VGExponentialLinearised, bm_match_moments, linearise_exp_levy
from levy_liquidation.solver import (
    OptimalLiquidation,
    SolveConfig,
    Termination,
    classify_termination,
    hjb_residual,
    liquidation_time,
    optimal_speed,
    solve,
    time_to_fraction,
    trajectory,
    value_function,
)

SIG, A, BETA = 0.02, 1e-5, 4.7e-5
BM0 = KappaFunction(BrownianLinear(0.0, SIG), A)
LIN = PowerLaw(BETA, 1.0)
RATE = SIG * math.sqrt(A / (2 * BETA))
VG = VGExponentialLinearised(-0.002, 0.02, 0.6, 100.0)
_mu, _s2 = bm_match_moments(-0.002, 0.02, 0.6)
BM = linearise_exp_levy(BrownianLinear(_mu, math.sqrt(_s2)), 100.0)
POW = PowerLaw(4.7e-5, 0.6)


def test_speed_closed_forms():
    assert float(optimal_speed(BM0, LIN, 0.0)) == 0.0
    y = np.array([1.0, 1e3, 1e5])
    assert np.allclose(optimal_speed(BM0, LIN, y), y * RATE, rtol=1e-12)
    kf = KappaFunction(VG, 1e-5)
    expected = (kf(y) / (1e-5 * 4.7e-5 * 0.6)) ** (1 / 1.6)
    assert np.allclose(optimal_speed(kf, POW, y), expected, rtol=1e-10)


def test_termination_table():
    assert classify_termination(0.4, -1.0) is Termination.FINITE
    assert classify_termination(0.4, 0.0) is Termination.INFINITE
    assert classify_termination(-0.5, 0.0) is Termination.FINITE
    assert classify_termination(1.0, 0.0) is Termination.UNCLASSIFIED
    assert classify_termination(0.4, 1.0) is Termination.UNCLASSIFIED
    assert classify_termination(None, -1.0) is Termination.UNCLASSIFIED


def test_liquidation_times():
    assert liquidation_time(BM0, POW, 0.0) == 0.0
    assert liquidation_time(BM0, POW, 1e4) == math.inf
    assert liquidation_time(BM0, LIN, 1e4) == math.inf
    assert math.isfinite(liquidation_time(KappaFunction(VG, 1e-5), POW, 2e4))


@pytest.mark.parametrize("q", [0.1, 0.4, 0.9, 0.999])
def test_time_to_fraction_exponential(q):
    assert time_to_fraction(BM0, LIN, 1e4, q) == pytest.approx(math.log(1 / (1 - q)) / RATE, rel=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(1e-7, 1e-3), st.floats(1e-7, 1e-2), st.floats(1.0, 1e6))
def test_exponential_trajectory(sig, a, beta, y0):
    kf = KappaFunction(BrownianLinear(0.0, sig), a)
    r = sig * math.sqrt(a / (2 * beta))
    times = np.linspace(0, math.log(1e6) / r, 50)
    tr = trajectory(kf, PowerLaw(beta, 1.0), SolveConfig(a, y0), times=times)
    assert np.allclose(tr.positions, y0 * np.exp(-r * times), rtol=1e-6, atol=0)


def test_trajectory_invariants_finite_tau():
    kf = KappaFunction(VG, 1e-5)
    res = solve(kf, POW, SolveConfig(1e-5, 2e4))
    tr = res.trajectory
    assert tr.positions[0] == 2e4
    assert np.all(np.diff(tr.positions) <= 0) and np.all(tr.positions >= 0)
    assert res.termination is Termination.FINITE
    assert tr.times[-1] == pytest.approx(res.tau)
    after = trajectory(kf, POW, SolveConfig(1e-5, 2e4), times=[res.tau, res.tau * 1.5])
    assert np.all(after.positions == 0)


def test_zero_position():
    tr = trajectory(BM0, LIN, SolveConfig(A, 0.0))
    assert np.all(tr.positions == 0)
    assert value_function(BM0, LIN, 0.0) == 0.0


def test_value_brute_force():
    # integrand of v: kappa/xi + A F(xi) with xi = r u, by a plain trapezoid rule
    y = 1e4
    u = np.linspace(0, y, 2_000_001)
    kap = 0.5 * (A * SIG * u) ** 2
    xi = RATE * u
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(u > 0, kap / xi, 0.0) + A * BETA * xi
    brute = trapezoid(f, u)
    assert float(value_function(BM0, LIN, y)) == pytest.approx(brute, rel=1e-8)


def test_value_monotone():
    kf = KappaFunction(VG, 1e-5)
    ys = np.array([10.0, 1e2, 1e3, 1e4])
    v = np.array([float(value_function(kf, POW, y)) for y in ys])
    assert np.all(np.diff(v) > 0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 5.3), st.floats(-6, -4), st.sampled_from(["vg", "bm"]))
def test_hjb_property(log_y, log_a, which):
    a = 10.0**log_a
    kf = KappaFunction(VG if which == "vg" else BM, a)
    chk = hjb_residual(kf, POW, 10.0**log_y)
    assert chk.relative <= 1e-8
    assert chk.minimiser_ok


def test_hjb_zero():
    chk = hjb_residual(BM0, LIN, 0.0)
    assert chk.residual == 0.0


def test_tail_probe_verdicts():
    neg = KappaFunction(BrownianLinear(-0.01, SIG), A)
    assert OptimalLiquidation(neg, PowerLaw(BETA, 0.6)).tail_probe(1e4).verdict == "converges"
    assert OptimalLiquidation(BM0, PowerLaw(BETA, 0.6)).tail_probe(1e4).verdict == "diverges"
    assert OptimalLiquidation(BM0, PowerLaw(BETA, 1.5)).tail_probe(1e4).verdict == "converges"


def test_domain_errors():
    with pytest.raises(DomainError):
        SolveConfig(-1.0, 1.0)
    with pytest.raises(DomainError):
        time_to_fraction(BM0, LIN, 1.0, 1.5)
    with pytest.raises(DomainError):
        OptimalLiquidation(KappaFunction(BrownianLinear(0.5, SIG), A), LIN)
