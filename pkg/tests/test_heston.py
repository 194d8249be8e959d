import numpy as np
import pytest

from affinepricing import check_martingale, validate_params
from affinepricing.heston import (EXPLOSION_PARAMS, SURFACE_PARAMS, HestonDefaultParams, HestonMoments,
                                  bs_call, explosion_time, four_instruments, hedge_four_instruments,
                                  implied_vol, implied_vol_surface, riccati_closed_form, simulate_hedge,
                                  to_affine)
from affinepricing.hedging import sensitivities_call, sensitivities_power, sensitivities_stock
from affinepricing import solve_riccati_batch

import oracles

X0 = np.asarray(SURFACE_PARAMS.x0)
GRID_P = np.arange(-10.0, 10.0001, 0.5)


def test_mapping_is_admissible_martingale():
    for hp in (SURFACE_PARAMS, EXPLOSION_PARAMS, SURFACE_PARAMS.without_default()):
        params, market = to_affine(hp)
        assert validate_params(params, market).ok
        assert check_martingale(params, market).is_martingale_sufficient


def test_closed_form_at_zero_without_discounting():
    hp = HestonDefaultParams(kappa1=0.06, kappa2=0.04, theta1=1.0, theta2=0.3, eta1=0.2, eta2=0.1, rho=-0.6)
    A, B1, B2 = riccati_closed_form(hp, 0.0, 2.0)
    assert (A, B1, B2) == (0, 0, 0)


def test_closed_form_at_one_vanishes():
    for t in (0.1, 1.0, 10.0):
        A, B1, B2 = riccati_closed_form(SURFACE_PARAMS, 1.0, t)
        assert abs(B1) < 1e-15 and abs(B2) < 1e-15 and abs(A) < 1e-15


def test_closed_form_vs_generic_ode():
    params, market = to_affine(SURFACE_PARAMS)
    zs = np.array([0.5, 2.0, 1 + 1j])
    for t in (0.5, 3.0):
        res = solve_riccati_batch(params, market, zs[:, None] * market.epsilon[None, :], zs - 1.0, zs, t)
        A, B1, B2 = riccati_closed_form(SURFACE_PARAMS, zs, t)
        np.testing.assert_allclose(res.A[-1], A, rtol=1e-8)
        np.testing.assert_allclose(res.B[-1][:, 0], B1, rtol=1e-8)
        np.testing.assert_allclose(res.B[-1][:, 1], B2, rtol=1e-8)


def test_uncorrelated_factor_is_cir_bond():
    # with z = 0 and no default the first factor equation is the CIR bond equation with rate delta1 V1
    hp = HestonDefaultParams(kappa1=0.8, kappa2=0.5, theta1=0.05, theta2=0.0, eta1=0.4, eta2=0.0, rho=0.0,
                             delta1=1.0, x0=(0.03, 0.0, 0.0))
    t = 2.0
    A, B1, _ = riccati_closed_form(hp, 0.0, t)
    value = float(np.exp(A + B1 * 0.03).real)
    assert value == pytest.approx(oracles.cir_bond(t, 0.03, 0.8, 0.05, 0.4), rel=1e-12)


def test_explosion_time_trivial_orders():
    assert explosion_time(EXPLOSION_PARAMS, 0.0) == np.inf
    assert explosion_time(EXPLOSION_PARAMS, 1.0) == np.inf


def test_explosion_curve_shape():
    t_star = explosion_time(EXPLOSION_PARAMS, GRID_P)
    far = np.abs(GRID_P) >= 5
    assert np.all(np.isfinite(t_star[far]))
    right = t_star[GRID_P >= 3]
    left = t_star[GRID_P <= -1][::-1]
    assert np.all(np.diff(right) < 0)
    assert np.all(np.diff(left) < 0)
    assert t_star[GRID_P == 10][0] < 5 and t_star[GRID_P == -10][0] < 5


def test_explosion_time_matches_ode_detection():
    params, market = to_affine(EXPLOSION_PARAMS)
    t_star = explosion_time(EXPLOSION_PARAMS, GRID_P)
    horizon = 400.0
    z = GRID_P.astype(complex)
    res = solve_riccati_batch(params, market, z[:, None] * market.epsilon[None, :], z - 1.0, z, horizon)
    for p, closed, ode in zip(GRID_P, t_star, res.explosion_time):
        if closed > horizon:
            assert ode == np.inf, p
        else:
            assert ode == pytest.approx(closed, rel=1e-2), p


def test_bs_limit_flat_surface():
    theta = 0.04
    hp = HestonDefaultParams(kappa1=1.0, kappa2=1.0, theta1=theta, theta2=0.0, eta1=0.0, eta2=0.0, rho=0.0,
                             d=0.03, x0=(theta, 0.0, 0.0))
    surf = implied_vol_surface(hp, [0.8, 1.0, 1.25], [0.5, 2.0])
    np.testing.assert_allclose(surf.vols, np.sqrt(theta), atol=1e-4)
    np.testing.assert_allclose(surf.bond_yields, 0.03, rtol=1e-10)


def test_surface_default_dominates():
    strikes = np.linspace(0.8, 1.2, 5)
    ts = np.linspace(0.5, 2.5, 5)
    up = implied_vol_surface(SURFACE_PARAMS, strikes, ts)
    down = implied_vol_surface(SURFACE_PARAMS.without_default(), strikes, ts)
    assert not up.diagnostics and not down.diagnostics
    assert np.all(up.vols >= down.vols)


def test_surface_bit_identical():
    a = implied_vol_surface(SURFACE_PARAMS, [0.9, 1.1], [1.0])
    b = implied_vol_surface(SURFACE_PARAMS, [0.9, 1.1], [1.0])
    assert a.vols.tobytes() == b.vols.tobytes() and a.prices.tobytes() == b.prices.tobytes()


def test_implied_vol_roundtrip():
    for vol in (0.05, 0.2, 0.8):
        price = float(bs_call(1.0, 1.1, 1.5, 0.02, vol))
        v, msg = implied_vol(price, 1.0, 1.1, 1.5, 0.02)
        assert msg == "" and v == pytest.approx(vol, abs=1e-7)
    assert oracles.black_scholes_call(1.0, 1.1, 1.5, 0.02, 0.3) == pytest.approx(float(bs_call(1.0, 1.1, 1.5, 0.02, 0.3)))


def test_implied_vol_out_of_range_reports():
    v, msg = implied_vol(2.0, 1.0, 1.0, 1.0, 0.0)
    assert np.isnan(v) and "above" in msg
    v, msg = implied_vol(-0.1, 1.0, 1.0, 1.0, 0.0)
    assert np.isnan(v) and "below" in msg


def _family(t=1.0, k=0.0):
    return four_instruments(SURFACE_PARAMS, t, k, X0, damping=0.5)


def test_four_instrument_matrix_layout():
    t, k = 1.0, 0.0
    oracle = HestonMoments(SURFACE_PARAMS)
    inst = _family(t, k)
    M = np.column_stack([s.as_array() for s in inst])
    _, b01, b02 = riccati_closed_form(SURFACE_PARAMS.without_default(), 0.0, t)
    _, b1, b2 = riccati_closed_form(SURFACE_PARAMS, 0.0, t)
    P0 = oracle.government().moment(t, X0, [0.0])[0].real
    P = oracle.moment(t, X0, [0.0])[0].real
    call = sensitivities_call(oracle.params, oracle.market, X0, t, k, 0.5, oracle)
    s = np.exp(X0[2])
    expected = np.array([
        [0.0, b01.real * P0, b1.real * P, call.H[0]],
        [0.0, b02.real * P0, b2.real * P, call.H[1]],
        [s, 0.0, 0.0, call.H[2]],
        [-s, 0.0, -P, -call.value],
    ])
    np.testing.assert_allclose(M, expected, rtol=1e-12, atol=1e-15)
    # determinant condition of the four-instrument family
    dc = call.H
    det = s * P0 * P * (-dc[0] * b02.real + dc[1] * b01.real
                        + (b01.real * b2.real - b02.real * b1.real) * (dc[2] - call.value))
    assert np.linalg.det(M) == pytest.approx(det, rel=1e-10)
    assert abs(det) > 0


def test_hedge_stock_and_corporate_bond_unit_vectors():
    oracle = HestonMoments(SURFACE_PARAMS)
    par, mk = oracle.params, oracle.market
    th = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, X0, sensitivities_stock(par, mk, X0), oracle, 0.5)
    np.testing.assert_allclose(th, [1, 0, 0, 0], atol=1e-12)
    th = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, X0, sensitivities_power(par, mk, X0, 1.0, 0.0, oracle),
                                oracle, 0.5)
    np.testing.assert_allclose(th, [0, 0, 1, 0], atol=1e-12)


def test_put_hedge_via_parity():
    oracle = HestonMoments(SURFACE_PARAMS)
    par, mk = oracle.params, oracle.market
    T, K = 0.75, 0.95
    call = sensitivities_call(par, mk, X0, T, np.log(K), 0.5, oracle)
    stock_claim = sensitivities_power(par, mk, X0, T, 1.0, oracle)
    gov = sensitivities_power(par, mk, X0, T, 0.0, oracle, government=True)
    put = call - stock_claim + K * gov
    th_put = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, X0, put, oracle, 0.5)
    th_call = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, X0, call, oracle, 0.5)
    th_stock = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, X0, stock_claim, oracle, 0.5)
    th_gov = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, X0, gov, oracle, 0.5)
    np.testing.assert_allclose(th_put, th_call - th_stock + K * th_gov, atol=1e-8)


def test_batched_hedge_matches_single():
    oracle = HestonMoments(SURFACE_PARAMS)
    par, mk = oracle.params, oracle.market
    X = np.array([X0, [0.02, 0.05, 0.1], [0.08, 0.01, -0.2]])
    target = sensitivities_call(par, mk, X, 0.8, 0.05, 0.5, oracle)
    batch = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, X, target, oracle, 0.5)
    for i, x in enumerate(X):
        single_target = sensitivities_call(par, mk, x, 0.8, 0.05, 0.5, oracle)
        single = hedge_four_instruments(SURFACE_PARAMS, 1.0, 0.0, x, single_target, oracle, 0.5)
        np.testing.assert_allclose(batch[i], single, rtol=1e-9, atol=1e-12)


def test_hedge_experiment_small_is_deterministic():
    a = simulate_hedge(SURFACE_PARAMS, n_paths=64, n_steps=20, seed=3)
    b = simulate_hedge(SURFACE_PARAMS, n_paths=64, n_steps=20, seed=3)
    assert a.hedged_pnl.tobytes() == b.hedged_pnl.tobytes()
    assert a.std_reduction > 0.5
