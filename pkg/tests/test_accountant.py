import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize

from dprelia.accountant import (
    DEFAULT_ORDERS,
    PrivacyParams,
    RDPCurve,
    calibrate_sigma,
    compose,
    epsilon_for,
    epsilon_for_params,
    rdp_curve,
    rdp_subsampled_gaussian,
    rdp_to_dp,
)
from dprelia.errors import CalibrationError, InvalidInputError


def gaussian_rdp_mc(sigma, order, n=1_000_000, seed=0):
    """Monte Carlo Renyi divergence D_order(N(1, s^2) || N(0, s^2))."""
    z = np.random.default_rng(seed).normal(0.0, sigma, n)
    log_ratio = (2 * z - 1) / (2 * sigma**2)  # log p1(z)/p0(z)
    return math.log(np.mean(np.exp(order * log_ratio))) / (order - 1)


def mixture_moment(q, sigma, order, z):
    # (mu1/mu0)(z) for mu0 = N(0, s^2), mu1 = (1-q) N(0, s^2) + q N(1, s^2)
    return (1 - q + q * np.exp((2 * z - 1) / (2 * sigma**2))) ** order


def subsampled_rdp_quad(q, sigma, order):
    f = lambda z: mixture_moment(q, sigma, order, z) * math.exp(-z * z / (2 * sigma**2)) / (
        sigma * math.sqrt(2 * math.pi)
    )
    val, _ = integrate.quad(f, -40 * sigma, 40 * sigma + order, limit=500, epsabs=0, epsrel=1e-12)
    return math.log(val) / (order - 1)


# --- rdp_subsampled_gaussian ---------------------------------------------------------

def test_full_batch_examples():
    assert rdp_subsampled_gaussian(1.0, 1.0, 2) == pytest.approx(1.0, abs=1e-12)
    assert rdp_subsampled_gaussian(1.0, 2.0, 4) == pytest.approx(0.5, abs=1e-12)


def test_full_batch_matches_gaussian_monte_carlo():
    # closed form alpha/(2 sigma^2) cross-checked against a sampled divergence
    mc = gaussian_rdp_mc(1.0, 2)
    assert mc == pytest.approx(rdp_subsampled_gaussian(1.0, 1.0, 2), rel=0.02)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 3.7])
def test_reduction_at_q1(sigma):
    for order in range(2, 65):
        assert abs(rdp_subsampled_gaussian(1.0, sigma, order) - order / (2 * sigma**2)) <= 1e-9


@pytest.mark.parametrize("q, sigma, order", [(0.01, 1, 2), (0.1, 2, 4), (0.5, 1.5, 8), (0.2, 0.8, 5)])
def test_integer_bound_equals_quadrature(q, sigma, order):
    assert rdp_subsampled_gaussian(q, sigma, order) == pytest.approx(
        subsampled_rdp_quad(q, sigma, order), rel=1e-7
    )


@pytest.mark.parametrize("q, sigma, order", [(0.01, 1, 2), (0.1, 2, 4), (0.5, 1.5, 8)])
def test_bound_not_anticonservative_vs_monte_carlo(q, sigma, order):
    n = 1_000_000
    z = np.random.default_rng(11).normal(0.0, sigma, n)
    bound = rdp_subsampled_gaussian(q, sigma, order)
    # forward: mixture vs base Gaussian; reverse: base vs mixture, E_mu0[(mu0/mu1)^(order-1)]
    for m in (mixture_moment(q, sigma, order, z), mixture_moment(q, sigma, -(order - 1), z)):
        estimate = math.log(m.mean()) / (order - 1)
        # the forward bound is exact in expectation, so allow 4 delta-method standard errors
        se = m.std() / m.mean() / math.sqrt(n) / (order - 1)
        assert bound >= estimate - 4 * se


def test_fractional_order_takes_larger_neighbour():
    q, s = 0.05, 1.2
    v = rdp_subsampled_gaussian(q, s, 5.5)
    assert v == max(rdp_subsampled_gaussian(q, s, 5), rdp_subsampled_gaussian(q, s, 6))
    assert rdp_subsampled_gaussian(q, s, 1.5) == rdp_subsampled_gaussian(q, s, 2)


def test_large_noise_limit_monotone_to_zero():
    vals = [rdp_subsampled_gaussian(0.05, s, 8) for s in (1, 2, 5, 10, 100, 1000)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-7


def test_rdp_input_validation():
    with pytest.raises(InvalidInputError):
        rdp_subsampled_gaussian(0.1, 1.0, 1.0)
    with pytest.raises(InvalidInputError):
        rdp_subsampled_gaussian(0.0, 1.0, 2)
    with pytest.raises(InvalidInputError):
        rdp_subsampled_gaussian(0.1, 0.0, 2)


def test_rdp_curve_monotone_in_order():
    curve = rdp_curve(0.02, 0.9, 500)
    assert isinstance(curve, RDPCurve)
    assert all(b >= a for a, b in zip(curve.eps_rdp, curve.eps_rdp[1:]))
    assert min(curve.eps_rdp) >= 0


def test_saturation_is_reported_not_silent(caplog):
    # tiny noise makes exp((k^2 - k)/(2 s^2)) overflow even in log space at high order
    v = rdp_subsampled_gaussian(0.5, 1e-160, 256)
    assert v == math.inf
    assert "saturated" in caplog.text


# --- compose / rdp_to_dp -------------------------------------------------------------

def test_compose_examples():
    assert compose(0.01, 100) == pytest.approx(1.0, abs=1e-15)
    assert compose(0.37, 1) == 0.37
    assert compose(0.0, 10**6) == 0.0


def test_rdp_to_dp_examples():
    assert rdp_to_dp(2, 1, math.exp(-1)) == 2.0
    assert rdp_to_dp(11, 0, math.exp(-10)) == pytest.approx(1.0, abs=1e-15)
    assert rdp_to_dp(3, 0.7, 1 - 1e-12) == pytest.approx(0.7, abs=1e-11)
    with pytest.raises(InvalidInputError):
        rdp_to_dp(1.0, 0.5, 1e-5)


@given(
    st.floats(1.01, 300), st.floats(0, 50), st.floats(0, 50), st.floats(1e-12, 0.99)
)
@settings(max_examples=1000)
def test_rdp_to_dp_linear_in_eps(order, e1, e2, delta):
    base = rdp_to_dp(order, 0.0, delta)
    assert rdp_to_dp(order, e1 + e2, delta) == pytest.approx(
        rdp_to_dp(order, e1, delta) + rdp_to_dp(order, e2, delta) - base, rel=1e-12, abs=1e-12
    )


@given(st.floats(1.01, 300), st.floats(0.01, 50), st.floats(1e-12, 0.99))
@settings(max_examples=1000)
def test_rdp_to_dp_decreasing_in_order(order, step, delta):
    assert rdp_to_dp(order + step, 0.0, delta) < rdp_to_dp(order, 0.0, delta)


# --- epsilon_for ---------------------------------------------------------------------

def test_default_order_grid():
    assert DEFAULT_ORDERS[0] == 1.25 and 63.5 in DEFAULT_ORDERS and DEFAULT_ORDERS[-1] == 256.0
    assert all(b > a for a, b in zip(DEFAULT_ORDERS, DEFAULT_ORDERS[1:]))


def test_single_full_batch_step_oracle():
    # brute force over the grid with the closed-form Gaussian RDP
    lid = math.log(1e5)

    def closed(order):
        value = math.ceil(order) / 2  # fractional orders use the larger neighbour
        return value + lid / (order - 1)

    expected = min(closed(o) for o in DEFAULT_ORDERS)
    eps, order = epsilon_for(1.0, 1.0, 1, 1e-5)
    assert eps == pytest.approx(expected, abs=1e-12)
    assert order == 6.0
    # the continuous minimiser lies between grid points, so the grid answer is an upper bound
    cont = optimize.minimize_scalar(lambda a: a / 2 + lid / (a - 1), bounds=(1.01, 50), method="bounded")
    assert eps >= cont.fun - 1e-9 and eps - cont.fun < 0.01


def test_epsilon_decreasing_in_sigma():
    sigmas = [0.5, 0.7, 0.9, 1.2, 2, 4, 8, 16, 50]
    eps = [epsilon_for(s, 0.01, 1000, 1e-5)[0] for s in sigmas]
    assert all(b < a for a, b in zip(eps, eps[1:]))
    envelope = math.log(1e5) / (256 - 1)
    assert eps[-1] > envelope
    assert epsilon_for(1e4, 0.01, 1000, 1e-5)[0] == pytest.approx(envelope, rel=1e-3)


def test_epsilon_nondecreasing_in_steps_and_rate():
    for s in (0.6, 1.0, 3.0):
        by_t = [epsilon_for(s, 0.02, t, 1e-5)[0] for t in (1, 2, 10, 100, 1000, 2000)]
        assert all(b >= a for a, b in zip(by_t, by_t[1:]))
        by_q = [epsilon_for(s, q, 100, 1e-5)[0] for q in (0.001, 0.01, 0.1, 0.5, 1.0)]
        assert all(b >= a for a, b in zip(by_q, by_q[1:]))


def test_epsilon_for_params_wrapper():
    p = PrivacyParams(sigma=1.0, sample_rate=0.01, steps=1000, delta=1e-5)
    assert epsilon_for_params(p) == epsilon_for(1.0, 0.01, 1000, 1e-5)


def test_privacy_params_validation():
    with pytest.raises(InvalidInputError):
        PrivacyParams(sigma=1.0, sample_rate=0.0, steps=1, delta=1e-5)
    with pytest.raises(InvalidInputError):
        PrivacyParams(sigma=1.0, sample_rate=0.1, steps=0, delta=1e-5)
    with pytest.raises(InvalidInputError):
        epsilon_for(1.0, 0.1, 10, 1.0)


# --- calibrate_sigma -----------------------------------------------------------------

@pytest.mark.parametrize("target", [0.5, 1.0, 8.0])
def test_calibrate_round_trip(target):
    q, steps, delta = 256 / 1600, 300, 1e-5
    s = calibrate_sigma(target, delta, q, steps)
    assert epsilon_for(s, q, steps, delta)[0] <= target
    assert epsilon_for(s * (1 - 1e-4), q, steps, delta)[0] >= target


def test_tighter_target_needs_more_noise():
    q, steps, delta = 0.01, 2000, 1e-5
    sig = [calibrate_sigma(t, delta, q, steps) for t in (8.0, 4.0, 1.0, 0.3)]
    assert all(b > a for a, b in zip(sig, sig[1:]))


def test_calibrate_unreachable():
    with pytest.raises(CalibrationError, match="unreachable"):
        calibrate_sigma(1e-4, 1e-5, 1.0, 10_000)
    with pytest.raises(CalibrationError, match="bracket"):
        calibrate_sigma(1e6, 1e-5, 0.001, 1)
