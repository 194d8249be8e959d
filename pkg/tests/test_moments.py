import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affinepricing import (AffineMoments, AffineParams, MarketSpec, SimConfig, bond_price, check_martingale,
                           discounted_moment, futures_price, probe_domain, simulate)
from affinepricing.errors import MomentExplosionError
from affinepricing.heston import EXPLOSION_PARAMS, SURFACE_PARAMS, HestonDefaultParams, explosion_time, to_affine
from affinepricing.montecarlo import discounted_power

import oracles
import testmodels as tm

MODELS = {"cir": tm.cir, "merton": tm.merton, "pure_drift": tm.pure_drift, "jump": tm.jump_model,
          "heston": tm.heston}


def test_moment_at_zero_maturity():
    params, market, x = tm.jump_model()
    z = np.array([0.5, 2.0 + 1j])
    np.testing.assert_allclose(AffineMoments(params, market).moment(0.0, x, z),
                               np.exp(z * (market.e + market.epsilon @ x)))


def test_z_zero_without_rates_or_default_is_one():
    params, _, x = tm.jump_model()
    market = MarketSpec(e=0.0, epsilon=[0.0, 1.0])
    assert discounted_moment(params, market, x, 3.0, 0.0) == pytest.approx(1.0, abs=1e-12)


def test_heston_stock_is_martingale():
    params, market, x = tm.heston()
    for t in (0.5, 1.0, 2.0, 5.0, 10.0):
        assert discounted_moment(params, market, x, t, 1.0) == pytest.approx(1.0, abs=1e-9)


def test_bonds_without_rates_or_default():
    params, _, x = tm.jump_model()
    market = MarketSpec(e=0.0, epsilon=[0.0, 1.0])
    assert bond_price(params, market, x, 2.0, "government") == pytest.approx(1.0, abs=1e-12)
    assert bond_price(params, market, x, 2.0, "corporate") == pytest.approx(1.0, abs=1e-12)


def test_constant_intensity_corporate_bond():
    params, _, x = tm.jump_model()
    market = MarketSpec(e=0.0, epsilon=[0.0, 1.0], c=0.03)
    assert bond_price(params, market, x, 2.0, "corporate") == pytest.approx(np.exp(-0.06), rel=1e-10)
    assert bond_price(params, market, x, 2.0, "government") == pytest.approx(1.0, abs=1e-12)


def test_heston_bonds_ordered_and_match_mc():
    params, market, x = tm.heston()
    gov = bond_price(params, market, x, 1.0, "government")
    corp = bond_price(params, market, x, 1.0, "corporate")
    assert 0 < corp < gov < 1
    smp = simulate(params, market, x, SimConfig(40000, 100, 1.0, seed=11))
    disc = np.exp(-smp.R)
    for value, mc in ((gov, disc), (corp, disc * smp.survived)):
        assert abs(mc.mean() - value) < 3 * mc.std(ddof=1) / np.sqrt(mc.size)


def test_futures_price_is_plain_expectation():
    params, market, x = tm.merton()
    t = 1.5
    h1 = oracles.merton_moment(1.0, t, 1.0, 0.2, 0.03, 0.02, ((0.4, -0.15), (0.3, 0.1)))
    # the rate is deterministic, so E[S_t 1{t < tau}] = exp(d t) h(1)
    assert futures_price(params, market, x, t) == pytest.approx(h1 * np.exp(0.03 * t), rel=1e-9)


def test_check_martingale_heston_true():
    params, market = to_affine(SURFACE_PARAMS)
    res = check_martingale(params, market)
    assert res.is_martingale_sufficient and res.beta_JJ_zero


def test_check_martingale_false_without_log_drift():
    params, market = to_affine(SURFACE_PARAMS)
    beta = np.array(params.beta)
    beta[2, 0] = 0.0
    broken = AffineParams(n=3, m=2, a=params.a, alpha=params.alpha, b=params.b, beta=beta)
    assert not check_martingale(broken, market).is_martingale_sufficient


def test_check_martingale_deterministic_rate_flag():
    for d, expected in ((0.0, True), (0.04, True)):
        params, market, _ = tm.deterministic(d=d)
        # with eps = 0 the discounted stock exp(e + Lambda) is constant before default
        assert check_martingale(params, market).is_martingale_sufficient is expected
    params = AffineParams(n=1, m=0, a=[[0.0]], alpha=[], b=[0.02], beta=[[0.0]])
    assert not check_martingale(params, MarketSpec(e=0.0, epsilon=[1.0])).is_martingale_sufficient


@pytest.mark.parametrize("name", ["merton", "jump", "heston"])
def test_martingale_constancy(name):
    params, market, x = MODELS[name]()
    assert check_martingale(params, market).is_martingale_sufficient
    oracle = AffineMoments(params, market)
    values = [oracle.moment(t, x, [1.0])[0].real for t in (0.25, 1.0, 3.0, 8.0)]
    np.testing.assert_allclose(values, values[0], rtol=100 * 1e-10)


@settings(max_examples=25, deadline=None)
@given(st.floats(-2.0, 3.0), st.floats(-4.0, 4.0), st.floats(0.05, 4.0))
def test_conjugate_symmetry(zr, zi, t):
    params, market, x = tm.jump_model()
    oracle = AffineMoments(params, market)
    z = complex(zr, zi)
    if not np.all(oracle.is_finite(t, [z, np.conj(z)])):
        return
    a, b = oracle.moment(t, x, [z, np.conj(z)])
    assert b == pytest.approx(np.conj(a), rel=1e-9, abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 4.0), st.floats(0.05, 5.0))
def test_real_moments_positive(p, t):
    params, market, x = tm.jump_model()
    oracle = AffineMoments(params, market)
    if not oracle.is_finite(t, [p])[0]:
        return
    h = oracle.moment(t, x, [p])[0]
    assert h.imag == 0 or abs(h.imag) < 1e-14 * abs(h.real)
    assert h.real > 0


def test_characteristic_function_reduction():
    params, _, x = tm.merton()
    market = MarketSpec(e=0.0, epsilon=[1.0])
    jumps = ((0.4, -0.15), (0.3, 0.1))
    for y in (0.5, 3.0, 10.0):
        z = 1j * y
        expected = oracles.merton_moment(z, 1.0, 1.0, 0.2, 0.0, 0.0, jumps)
        assert discounted_moment(params, market, x, 1.0, z) == pytest.approx(expected, rel=1e-9)


def test_moment_explosion_raises():
    params, market = to_affine(EXPLOSION_PARAMS)
    x = np.asarray(EXPLOSION_PARAMS.x0)
    with pytest.raises(MomentExplosionError):
        discounted_moment(params, market, x, 5.0, 10.0)


@pytest.mark.parametrize("name", list(MODELS))
def test_moments_match_mc(name):
    params, market, x = MODELS[name]()
    t = 1.0
    zs = np.array([0, 0.5, 1, 1j, 1 + 1j])
    smp = simulate(params, market, x, SimConfig(40000, 200, t, seed=5))
    mc, se = discounted_power(smp, zs)
    h = AffineMoments(params, market).moment(t, x, zs)
    for z, value, est, err in zip(zs, h, mc, se):
        # the biased part of an Euler estimate is O(dt); allow 3 SE plus a small floor
        assert abs(value - est) <= 3 * err + 2e-3, (z, value, est, err)


def test_probe_domain_no_explosion():
    params, market, _ = tm.pure_drift()
    res = probe_domain(params, market, 2.0, -5.0, 5.0, 21)
    assert res.real_interval == (-5.0, 5.0)
    assert all(ok for _, ok in res.probe_points)


def test_probe_domain_matches_explosion_times():
    params, market = to_affine(EXPLOSION_PARAMS)
    res = probe_domain(params, market, 10.0, -10.0, 10.0, 41)
    lo, hi = res.real_interval
    for p, ok in res.probe_points:
        inside = lo < p < hi
        assert ok == inside
        t_star = explosion_time(EXPLOSION_PARAMS, p)
        assert (t_star > 10.0) == ok


def test_probe_domain_zero_maturity():
    params, market = to_affine(EXPLOSION_PARAMS)
    res = probe_domain(params, market, 0.0, -10.0, 10.0, 11)
    assert all(ok for _, ok in res.probe_points)


def test_oracle_cache_is_thread_safe():
    params, market, x = tm.jump_model()
    oracle = AffineMoments(params, market)
    zs = np.linspace(-1, 2, 7)
    expected = AffineMoments(params, market).moment(1.0, x, zs)
    results = []

    def work():
        for _ in range(5):
            results.append(oracle.moment(1.0, x, zs))

    threads = [threading.Thread(target=work) for _ in range(4)]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for r in results:
        np.testing.assert_array_equal(r, expected)


def test_cached_coefficients_are_read_only():
    params, market, _ = tm.jump_model()
    a0, B, finite = AffineMoments(params, market).coefficients(1.0, [0.5])
    with pytest.raises(ValueError):
        B[0, 0] = 1.0


def test_heston_structural_reduction_to_one_factor():
    hp = HestonDefaultParams(kappa1=1.2, kappa2=0.5, theta1=0.04, theta2=0.0, eta1=0.3, eta2=0.0, rho=-0.5,
                             d=0.02, x0=(0.04, 0.0, 0.0))
    params, market = to_affine(hp)
    assert np.all(params.alpha[1] == 0)
    assert market.c == 0 and not np.any(market.gamma) and not np.any(market.delta)
