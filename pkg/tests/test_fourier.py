import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affinepricing import (AffineMoments, QuadratureSpec, SimConfig, call_price, call_prices, choose_damping,
                           digital_prices, mc_price, otm_price_sinh, simulate)
from affinepricing.errors import DampingInfeasibleError
from affinepricing.fourier import sinh_integrand
from affinepricing.heston import EXPLOSION_PARAMS, SURFACE_PARAMS, HestonMoments, explosion_time

import oracles
import testmodels as tm

X0 = np.asarray(SURFACE_PARAMS.x0)
KS = np.log([0.8, 1.0, 1.2])
JUMPS = ((0.4, -0.15), (0.3, 0.1))

# generic-ODE route (AffineMoments) at damping 0.5; the closed-form oracle must reproduce these
FROZEN_CALLS = {
    0.5: [0.22471601879340314, 0.08030073016315174, 0.01495988591503107],
    1.0: [0.25892076472982145, 0.12853846192980117, 0.05052847090943337],
}
FROZEN_DIGITALS = {
    0.5: ([0.9237197606199621, 0.6111853113695189, 0.1991526222764493],
          [0.8737546772831478, 0.5308845812063978, 0.15349394696796523]),
    1.0: ([0.8744894411179882, 0.6511073792063632, 0.37009430398075815],
          [0.7694608454853062, 0.5225689172767422, 0.2663048608929469]),
}


@pytest.fixture(scope="module")
def heston_oracle():
    return HestonMoments(SURFACE_PARAMS)


@pytest.fixture(scope="module")
def merton_oracle():
    params, market, x = tm.merton()
    return AffineMoments(params, market), x


def test_frozen_heston_calls(heston_oracle):
    for t, expected in FROZEN_CALLS.items():
        np.testing.assert_allclose(call_prices(heston_oracle, t, X0, KS, 0.5).price, expected, rtol=1e-9)


def test_frozen_heston_digitals(heston_oracle):
    for t, (a, b) in FROZEN_DIGITALS.items():
        res = digital_prices(heston_oracle, t, X0, KS, 0.5, 0.5)
        np.testing.assert_allclose(res.asset_or_nothing, a, rtol=1e-9)
        np.testing.assert_allclose(res.binary, b, rtol=1e-9)


@pytest.mark.parametrize("t", [0.25, 1.0, 3.0])
def test_merton_calls(merton_oracle, t):
    oracle, x = merton_oracle
    strikes = np.array([0.6, 0.9, 1.0, 1.1, 1.5])
    prices = call_prices(oracle, t, x, np.log(strikes)).price
    expected = [oracles.merton_call(K, t, 1.0, 0.2, 0.03, 0.02, JUMPS) for K in strikes]
    np.testing.assert_allclose(prices, expected, rtol=1e-8, atol=1e-12)


def test_merton_digitals(merton_oracle):
    oracle, x = merton_oracle
    for K in (0.85, 1.0, 1.3):
        res = digital_prices(oracle, 1.0, x, np.log(K), 0.5, -0.5)
        a, b = oracles.merton_digitals(K, 1.0, 1.0, 0.2, 0.03, 0.02, JUMPS)
        assert res.asset_or_nothing == pytest.approx(a, rel=1e-8)
        assert res.binary == pytest.approx(b, rel=1e-8)


def test_deterministic_call():
    params, market, x = tm.deterministic(d=0.03, s0=1.2)
    oracle = AffineMoments(params, market)
    t = 1.0
    for K in (0.9, 1.2, 1.3):
        expected = np.exp(-0.03 * t) * max(1.2 * np.exp(0.03 * t) - K, 0.0)
        assert call_price(oracle, t, x, np.log(K), 1.0) == pytest.approx(expected, abs=2e-3)


def test_deterministic_otm_put_is_zero():
    params, market, x = tm.deterministic(d=0.03, s0=1.2)
    oracle = AffineMoments(params, market)
    # a point mass has a non-decaying transform, so the truncation warning is expected
    with pytest.warns(RuntimeWarning, match="truncated"):
        price = otm_price_sinh(oracle, 1.0, x, np.log(1.0), 0.5)
    assert abs(price) < 2e-3


def test_deep_in_the_money_limit(heston_oracle):
    k = np.log(1e-4)
    h0, h1 = heston_oracle.moment(1.0, X0, [0.0, 1.0]).real
    assert call_price(heston_oracle, 1.0, X0, k, 0.5) == pytest.approx(h1 - np.exp(k) * h0, abs=1e-8)


def test_zero_maturity_intrinsic(heston_oracle):
    np.testing.assert_array_equal(call_prices(heston_oracle, 0.0, X0, KS).price, np.maximum(1 - np.exp(KS), 0))


def test_sinh_matches_call_and_put_parity(heston_oracle):
    t = 1.0
    h0, h1 = heston_oracle.moment(t, X0, [0.0, 1.0]).real
    calls = call_prices(heston_oracle, t, X0, KS, 2.0).price
    otm = otm_price_sinh(heston_oracle, t, X0, KS[[0, 2]], 0.5)
    # above the spot the out-of-the-money option is the call, below it is the put
    assert otm[1] == pytest.approx(calls[2], abs=1e-9)
    put = calls[0] - h1 + np.exp(KS[0]) * h0
    assert otm[0] == pytest.approx(put, abs=1e-9)


def test_sinh_integrand_symmetry(heston_oracle):
    y = np.linspace(0.1, 30.0, 13)
    g_pos = sinh_integrand(heston_oracle, 1.0, X0, 0.5, y)
    g_neg = sinh_integrand(heston_oracle, 1.0, X0, 0.5, -y)
    np.testing.assert_allclose(g_neg, np.conj(g_pos), rtol=1e-13, atol=1e-16)


@pytest.mark.parametrize("pq", [(0.5, 0.5), (-0.5, -0.5), (0.0, 0.0), (-1.0, 1.0), (-1.5, -0.5), (1.5, 2.0)])
def test_digital_damping_branches_agree(heston_oracle, pq):
    ref = digital_prices(heston_oracle, 1.0, X0, KS, 0.5, 0.5)
    res = digital_prices(heston_oracle, 1.0, X0, KS, *pq)
    np.testing.assert_allclose(res.asset_or_nothing, ref.asset_or_nothing, atol=1e-9)
    np.testing.assert_allclose(res.binary, ref.binary, atol=1e-9)
    np.testing.assert_allclose(res.call, ref.call, atol=1e-9)


def test_binary_deep_itm_is_bond():
    params, market, x = tm.merton(c=0.0)
    oracle = AffineMoments(params, market)
    res = digital_prices(oracle, 1.0, x, np.log(1e-5), 0.5, 0.5)
    assert res.binary == pytest.approx(oracle.moment(1.0, x, [0.0])[0].real, abs=1e-6)


def test_lee_parity(heston_oracle):
    for t in (0.5, 1.0):
        res = digital_prices(heston_oracle, t, X0, KS, 0.5, 0.5)
        direct = call_prices(heston_oracle, t, X0, KS, 1.0).price
        assert np.all(np.abs(res.asset_or_nothing - np.exp(KS) * res.binary - direct) < 1e-6)


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 5.0])
def test_damping_invariance(heston_oracle, t):
    a = call_prices(heston_oracle, t, X0, KS, 0.5).price
    b = call_prices(heston_oracle, t, X0, KS, 2.0).price
    assert np.max(np.abs(a - b)) < 1e-8


def test_infeasible_damping_names_damping(heston_oracle):
    with pytest.raises(DampingInfeasibleError) as info:
        call_prices(heston_oracle, 1.0, X0, KS, 40.0)
    assert info.value.damping == 40.0
    assert "p=40" in str(info.value)


def test_choose_damping_all_finite():
    params, market, x = tm.pure_drift()
    oracle = AffineMoments(params, market)
    assert choose_damping(oracle, 2.0) == 3.0
    assert choose_damping(oracle, 0.0) == 3.0


def test_choose_damping_respects_explosion():
    oracle = HestonMoments(EXPLOSION_PARAMS)
    t = 1.5 * explosion_time(EXPLOSION_PARAMS, 4.0)
    p = choose_damping(oracle, t)
    assert p < 3.0
    assert explosion_time(EXPLOSION_PARAMS, p + 1.0) > t


def test_trapezoid_rule_is_consistent(heston_oracle):
    quad = QuadratureSpec(rule="trapezoid", n_points=40001, y_max=200.0)
    res = call_prices(heston_oracle, 1.0, X0, KS, 1.0, quad).price
    np.testing.assert_allclose(res, FROZEN_CALLS[1.0], atol=1e-6)


def test_batched_states_match_single(heston_oracle):
    X = np.array([X0, [0.02, 0.05, 0.1]])
    batch = call_prices(heston_oracle, 1.0, X, KS, 0.5).price
    for i in range(2):
        np.testing.assert_allclose(batch[i], call_prices(heston_oracle, 1.0, X[i], KS, 0.5).price, rtol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(-0.6, 0.6))
def test_monotone_and_convex_in_strike(t, centre):
    oracle = HestonMoments(SURFACE_PARAMS)
    strikes = np.exp(centre) * np.linspace(0.7, 1.3, 10)
    prices = call_prices(oracle, t, X0, np.log(strikes), 0.5).price
    assert np.all(np.diff(prices) <= 1e-8)
    second = (prices[2:] - 2 * prices[1:-1] + prices[:-2])
    assert np.all(second >= -1e-8)


@pytest.mark.parametrize("name", ["merton", "jump", "heston"])
def test_prices_match_mc(name):
    params, market, x = {"merton": tm.merton, "jump": tm.jump_model, "heston": tm.heston}[name]()
    oracle = AffineMoments(params, market)
    t = 1.0
    smp = simulate(params, market, x, SimConfig(40000, 200, t, seed=21))
    s0 = float(np.exp(oracle.log_spot(x)))
    for K in (0.85, 1.0, 1.15):
        k = np.log(K)
        dp = digital_prices(oracle, t, x, k, 0.5, 0.5)
        cases = [(dp.call, lambda s: np.maximum(s - K, 0.0)),
                 (dp.asset_or_nothing, lambda s: s * (s > K)),
                 (dp.binary, lambda s: (s > K).astype(float))]
        if abs(k - np.log(s0)) > 1e-12:
            otm_payoff = (lambda s: np.maximum(s - K, 0.0)) if k > np.log(s0) else \
                (lambda s: np.where(s > 0, np.maximum(K - s, 0.0), 0.0))
            cases.append((otm_price_sinh(oracle, t, x, k, 0.5), otm_payoff))
        for value, payoff in cases:
            est, se = mc_price(smp, payoff)
            assert abs(value - est) < 3 * se + 1e-3, (name, K, value, est, se)


def test_tiny_negative_prices_are_clamped_quietly(heston_oracle):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        price = call_prices(heston_oracle, 0.01, X0, [np.log(3.0)], 0.5).price
    assert price[0] >= 0.0
