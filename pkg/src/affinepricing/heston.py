"""Two-factor Heston-type model with stochastic rate and default intensity.

State ``X = (V1, V2, log-stock)``: two CIR factors driving variance, short rate
and default intensity, and a log-price with correlation ``rho`` to ``V1``::

    r = d + delta1 V1 + delta2 V2,    lam = c + gamma1 V1 + gamma2 V2
    S = exp(X3 + R + Lambda) 1{t < tau}

The transform coefficients reduce to two decoupled scalar Riccati equations
with constant coefficients, solved here in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .errors import DegenerateHedgeError
from .fourier import QuadratureSpec, call_prices, choose_damping
from .hedging import (SensitivityVector, build_and_solve, sensitivities_call, sensitivities_power,
                      sensitivities_stock, solve_batch)
from .model import AffineParams, MarketSpec
from .moments import AffineMoments, MomentOracle


@dataclass(frozen=True)
class HestonDefaultParams:
    kappa1: float
    kappa2: float
    theta1: float
    theta2: float
    eta1: float
    eta2: float
    rho: float
    c: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    d: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    x0: tuple = field(default=(0.05, 0.03, 0.0))

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        if len(self.x0) != 3:
            raise ValueError("x0 must have three components (V1, V2, log S0)")
        for name in ("kappa1", "kappa2", "theta1", "theta2", "eta1", "eta2",
                     "c", "gamma1", "gamma2", "d", "delta1", "delta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [-1, 1]")
        if self.x0[0] < 0 or self.x0[1] < 0:
            raise ValueError("initial variance factors must be nonnegative")

    @property
    def spot(self) -> float:
        return float(np.exp(self.x0[2]))

    def without_default(self) -> "HestonDefaultParams":
        return replace(self, c=0.0, gamma1=0.0, gamma2=0.0)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["x0"] = list(self.x0)
        return out


# Parameter set with positive default probability used for the implied-vol comparison.
SURFACE_PARAMS = HestonDefaultParams(
    kappa1=0.06, kappa2=0.04, theta1=1.0, theta2=0.3, eta1=0.2, eta2=0.1, rho=-0.6,
    c=0.02, gamma1=0.01, gamma2=0.01, d=0.01, delta1=0.1, delta2=0.1, x0=(0.05, 0.03, 0.0))

# Parameter set for the explosion-time curve (gamma_i + delta_i = 0.2, c + d = 0.02).
EXPLOSION_PARAMS = HestonDefaultParams(
    kappa1=0.06, kappa2=0.04, theta1=1.0, theta2=0.3, eta1=0.2, eta2=0.1, rho=-0.6,
    c=0.01, gamma1=0.1, gamma2=0.1, d=0.01, delta1=0.1, delta2=0.1, x0=(0.05, 0.03, 0.0))


def to_affine(p: HestonDefaultParams) -> tuple[AffineParams, MarketSpec]:
    """Generator data with ``e = 0`` and ``epsilon = (0, 0, 1)``; ``x3`` carries ``log S0``."""
    alpha1 = 0.5 * np.array([[p.eta1 ** 2, 0.0, p.rho * p.eta1],
                             [0.0, 0.0, 0.0],
                             [p.rho * p.eta1, 0.0, 1.0]])
    alpha2 = 0.5 * np.diag([0.0, p.eta2 ** 2, 0.0])
    beta = np.array([[-p.kappa1, 0.0, 0.0],
                     [0.0, -p.kappa2, 0.0],
                     [-0.5, 0.0, 0.0]])
    params = AffineParams(n=3, m=2, a=np.zeros((3, 3)), alpha=[alpha1, alpha2],
                          b=np.array([p.kappa1 * p.theta1, p.kappa2 * p.theta2, 0.0]), beta=beta)
    market = MarketSpec(e=0.0, epsilon=np.array([0.0, 0.0, 1.0]), d=p.d,
                        delta=np.array([p.delta1, p.delta2]), c=p.c,
                        gamma=np.array([p.gamma1, p.gamma2]))
    return params, market


def _riccati_coefficients(p: HestonDefaultParams, z):
    """``(u, v)`` of ``B' = a2 B^2 + u B + v`` for both factors."""
    z = np.asarray(z, dtype=complex)
    u1 = p.rho * p.eta1 * z - p.kappa1
    v1 = (0.5 * z + p.gamma1 + p.delta1) * (z - 1.0)
    u2 = np.full_like(z, -p.kappa2)
    v2 = (p.gamma2 + p.delta2) * (z - 1.0)
    return (0.5 * p.eta1 ** 2, u1, v1), (0.5 * p.eta2 ** 2, u2, v2)


def _phi1(x):
    """``expm1(x)/x`` with its limit 1 at 0."""
    small = np.abs(x) < 1e-4
    xs = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2 + x * x / 6, np.expm1(xs) / xs)


def _phi2(x):
    """``(e^x - 1 - x)/x^2`` with its limit 1/2 at 0."""
    small = np.abs(x) < 1e-3
    xs = np.where(small, 1.0, x)
    return np.where(small, 0.5 + x / 6 + x * x / 24 + x ** 3 / 120,
                    (np.expm1(xs) - xs) / (xs * xs))


def scalar_riccati(a2: float, u, v, t: float):
    """Solve ``B' = a2 B^2 + u B + v``, ``B(0) = 0`` for complex ``u, v`` (arrays).

    Returns ``(B(t), int_0^t B)``. With ``D = sqrt(u^2 - 4 a2 v)`` and
    ``E = (exp(-D t) - 1)/D``::

        B(t)   = -2 v E / (2 + (u + D) E)
        int B  = -(lambda t + log(1 + (u + D) E / 2)) / a2,   lambda = (u + D)/2

    The logarithm is continued along ``[0, t]`` so no branch cut is crossed.
    No explosion check is made here.
    """
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    v = np.atleast_1d(np.asarray(v, dtype=complex))
    u, v = np.broadcast_arrays(u, v)
    t = float(t)
    if t == 0.0:
        return np.zeros(u.shape, complex), np.zeros(u.shape, complex)
    if a2 == 0.0:
        return v * t * _phi1(u * t), v * t * t * _phi2(u * t)

    D = np.sqrt(u * u - 4.0 * a2 * v)

    def E_of(s):
        Ds = D * s
        return -s * _phi1(-Ds)

    E = E_of(t)
    B = -2.0 * v * E / (2.0 + (u + D) * E)

    # continuous log of 1 + (u + D) E(s) / 2 along s in [0, t]
    n_grid = int(max(64, np.ceil(4.0 * np.max(np.abs(D)) * t / np.pi)))
    s = np.linspace(0.0, t, n_grid + 1)[:, None]
    w = 1.0 + 0.5 * (u + D)[None, :] * E_of(s)
    ang = np.unwrap(np.angle(w), axis=0)[-1]
    logw = np.log(np.abs(w[-1])) + 1j * ang
    intB = -(0.5 * (u + D) * t + logw) / a2
    return B, intB


def scalar_explosion_time(a2: float, u, v) -> np.ndarray:
    """Blow-up time of the real scalar Riccati ``B' = a2 B^2 + u B + v``, ``B(0) = 0``.

    ``inf`` when the solution stays bounded. Vectorized over ``u, v``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    out = np.full(u.shape, np.inf)
    if a2 <= 0.0:
        return out
    disc = u * u - 4.0 * a2 * v
    pos = v > 0
    neg_disc = pos & (disc < 0)
    g = np.sqrt(np.where(neg_disc, -disc, 1.0))
    out = np.where(neg_disc, (2.0 / g) * (0.5 * np.pi - np.arctan(u / g)), out)
    pos_disc = pos & (disc > 0) & (u > 0)
    sq = np.sqrt(np.where(pos_disc, disc, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(pos_disc, np.log((u + sq) / (u - sq)) / sq, out)
        out = np.where(pos & (disc == 0) & (u > 0), 2.0 / u, out)
    return out


def explosion_time(p: HestonDefaultParams, power) -> np.ndarray | float:
    """Time at which the discounted moment of order ``power`` becomes infinite.

    Minimum of the blow-up times of the two factor equations; ``inf`` if neither explodes.
    """
    scalar = np.ndim(power) == 0
    z = np.atleast_1d(np.asarray(power, dtype=float))
    (a1, u1, v1), (a2, u2, v2) = _riccati_coefficients(p, z)
    t1 = scalar_explosion_time(a1, u1.real, v1.real)
    t2 = scalar_explosion_time(a2, u2.real, v2.real)
    out = np.minimum(t1, t2)
    return float(out[0]) if scalar else out


def riccati_closed_form(p: HestonDefaultParams, z, t: float):
    """``(A_tilde, B1, B2)`` at maturity ``t`` for complex ``z`` (scalar or array).

    Entries with ``t >= t*(Re z)`` are returned as ``inf``.
    """
    scalar = np.ndim(z) == 0
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    (a1, u1, v1), (a2, u2, v2) = _riccati_coefficients(p, z)
    B1, I1 = scalar_riccati(a1, u1, v1, t)
    B2, I2 = scalar_riccati(a2, u2, v2, t)
    A = p.kappa1 * p.theta1 * I1 + p.kappa2 * p.theta2 * I2 + (p.c + p.d) * (z - 1.0) * t
    dead = explosion_time(p, z.real) <= t
    A, B1, B2 = (np.where(dead, np.inf + 0j, arr) for arr in (A, B1, B2))
    if scalar:
        return complex(A[0]), complex(B1[0]), complex(B2[0])
    return A, B1, B2


class HestonMoments(MomentOracle):
    """Moment oracle using the closed-form Riccati solution."""

    def __init__(self, params: HestonDefaultParams):
        super().__init__()
        self.hparams = params
        self.params, self.market = to_affine(params)
        self.n = 3
        self.epsilon = self.market.epsilon
        self.e = 0.0
        self._gov = None

    def _coefficients(self, t, z):
        if t == 0.0:
            return np.zeros(z.shape, complex), z[:, None] * self.epsilon[None, :]
        A, B1, B2 = riccati_closed_form(self.hparams, z, t)
        return A, np.stack([B1, B2, z], axis=1)

    def government(self) -> "HestonMoments":
        if self._gov is None:
            self._gov = HestonMoments(self.hparams.without_default())
        return self._gov

    def undiscounted(self) -> AffineMoments:
        return AffineMoments(self.params, self.market, discounted=False)


def bs_call(spot, strike, t, rate, vol):
    """Black-Scholes call price without dividends."""
    spot, strike, vol = (np.asarray(a, dtype=float) for a in (spot, strike, vol))
    if t <= 0:
        return np.maximum(spot - strike, 0.0)
    sq = vol * np.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(spot / strike) + (rate + 0.5 * vol * vol) * t) / sq
    return spot * norm.cdf(d1) - strike * np.exp(-rate * t) * norm.cdf(d1 - sq)


VOL_BOUNDS = (1e-6, 5.0)


def implied_vol(price: float, spot: float, strike: float, t: float, rate: float,
                xtol: float = 1e-8) -> tuple[float, str]:
    """Black-Scholes implied vol by bracketed root finding on ``[1e-6, 5]``.

    Returns ``(vol, diagnostic)``; ``vol`` is NaN with a reason when the price is
    outside the attainable range.
    """
    lo = float(bs_call(spot, strike, t, rate, VOL_BOUNDS[0]))
    hi = float(bs_call(spot, strike, t, rate, VOL_BOUNDS[1]))
    if not np.isfinite(price):
        return float("nan"), "non-finite price"
    if price < lo:
        return float("nan"), f"price {price:.6g} below lower bound {lo:.6g}"
    if price > hi:
        return float("nan"), f"price {price:.6g} above upper bound {hi:.6g}"
    if price == lo:
        return VOL_BOUNDS[0], ""
    vol = brentq(lambda v: float(bs_call(spot, strike, t, rate, v)) - price, *VOL_BOUNDS,
                 xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    return float(vol), ""


@dataclass
class ImpliedVolSurface:
    strikes: np.ndarray
    maturities: np.ndarray
    prices: np.ndarray  # (n_maturities, n_strikes)
    vols: np.ndarray
    bond_yields: np.ndarray
    dampings: np.ndarray
    diagnostics: list

    def rows(self):
        """``(strike, maturity, price, implied_vol, bond_yield)`` tuples, maturity-major."""
        for i, t in enumerate(self.maturities):
            for j, K in enumerate(self.strikes):
                yield float(K), float(t), float(self.prices[i, j]), float(self.vols[i, j]), \
                    float(self.bond_yields[i])


def implied_vol_surface(params: HestonDefaultParams, strikes, maturities, quad: QuadratureSpec | None = None,
                        damping: float | None = None) -> ImpliedVolSurface:
    """Call prices and Black-Scholes implied vols with the government-bond yield as rate."""
    strikes = np.asarray(strikes, dtype=float)
    maturities = np.asarray(maturities, dtype=float)
    if np.any(strikes <= 0) or np.any(maturities <= 0):
        raise ValueError("strikes and maturities must be positive")
    oracle = HestonMoments(params)
    gov = oracle.government()
    x = np.asarray(params.x0)
    spot = params.spot
    prices = np.empty((maturities.size, strikes.size))
    vols = np.empty_like(prices)
    yields = np.empty(maturities.size)
    damps = np.empty(maturities.size)
    diagnostics = []
    for i, t in enumerate(maturities):
        p = damping if damping is not None else choose_damping(oracle, t, x, "call")
        res = call_prices(oracle, t, x, np.log(strikes), p, quad)
        bond = float(gov.moment(t, x, [0.0])[0].real)
        yields[i] = -np.log(bond) / t
        damps[i] = p
        prices[i] = res.price
        for j, K in enumerate(strikes):
            vols[i, j], msg = implied_vol(res.price[j], spot, K, t, yields[i])
            if msg:
                diagnostics.append(f"K={K:g} t={t:g}: {msg}")
    return ImpliedVolSurface(strikes, maturities, prices, vols, yields, damps, diagnostics)


def four_instruments(params: HestonDefaultParams, t: float, k: float, x, oracle: HestonMoments | None = None,
                     damping: float | None = None) -> list[SensitivityVector]:
    """Stock, government bond, corporate bond and call (log-strike ``k``), all with maturity ``t``."""
    oracle = oracle or HestonMoments(params)
    par, mk = oracle.params, oracle.market
    return [
        sensitivities_stock(par, mk, x),
        sensitivities_power(par, mk, x, t, 0.0, oracle, government=True),
        sensitivities_power(par, mk, x, t, 0.0, oracle),
        sensitivities_call(par, mk, x, t, k, damping, oracle),
    ]


def hedge_four_instruments(params: HestonDefaultParams, t: float, k: float, x, target: SensitivityVector,
                           oracle: HestonMoments | None = None, damping: float | None = None) -> np.ndarray:
    """Holdings in (stock, government bond, corporate bond, call) matching ``target``.

    ``x`` may be a batch of states ``(P, 3)``; the result then has shape ``(P, 4)``.
    Raises :class:`DegenerateHedgeError` when the 4x4 system is singular.
    """
    inst = four_instruments(params, t, k, x, oracle, damping)
    if np.ndim(x) == 1:
        return build_and_solve(target, inst).theta
    A = np.stack([s.as_array() for s in inst], axis=-1)
    det = np.linalg.det(A)
    scale = np.prod(np.max(np.abs(A), axis=-2), axis=-1)
    bad = np.abs(det) <= 1e-13 * scale
    if np.any(bad):
        raise DegenerateHedgeError(f"degenerate hedge family at {int(bad.sum())} state(s)",
                                   rank=None, determinant=float(det[bad][0]))
    return solve_batch(target.as_array(), A)


@dataclass
class HedgeExperiment:
    hedged_pnl: np.ndarray
    unhedged_pnl: np.ndarray
    initial_price: float
    defaulted: np.ndarray

    @property
    def std_reduction(self) -> float:
        """``1 - std(hedged) / std(unhedged)``."""
        return float(1.0 - self.hedged_pnl.std() / self.unhedged_pnl.std())


def simulate_hedge(params: HestonDefaultParams, maturity: float = 1.0, log_strike: float = 0.0,
                   instrument_maturity: float = 1.25, instrument_log_strike: float = float(np.log(1.1)),
                   n_paths: int = 1000, n_steps: int = 250, seed: int = 0,
                   damping: float = 0.5) -> HedgeExperiment:
    """Discretely rebalanced replication of a call with the four-instrument family.

    The instruments (stock, government bond, corporate bond, call with
    ``instrument_log_strike``) mature at ``instrument_maturity >= maturity``. The
    portfolio is self-financing with the remainder in the money market account;
    after default everything is held in cash, which matches the call's zero
    recovery. Terminal P&L is portfolio value minus payoff, against the unhedged
    strategy of investing the initial premium in the money market.
    """
    from .montecarlo import SimConfig, iterate_paths

    if instrument_maturity < maturity:
        raise ValueError("instruments must not expire before the target")
    oracle = HestonMoments(params)
    par, mk = oracle.params, oracle.market
    cfg = SimConfig(n_paths, n_steps, maturity, seed=seed)
    dt = cfg.dt

    def priced_state(smp):
        x = smp.X.copy()
        x[:, :2] = np.maximum(x[:, :2], 0.0)
        x[:, 2] += smp.R + smp.Lambda
        return x

    V = theta = values = R_prev = None
    c0 = None
    for j, smp in enumerate(iterate_paths(par, mk, params.x0, cfg)):
        u = j * dt
        x = priced_state(smp)
        inst = four_instruments(params, instrument_maturity - u, instrument_log_strike, x, oracle, damping)
        new_values = np.stack([s.value for s in inst], axis=1)
        new_values[:, [0, 2, 3]] *= smp.survived[:, None]
        if j == 0:
            c0 = float(sensitivities_call(par, mk, x[0], maturity, log_strike, damping, oracle).value)
            V = np.full(n_paths, c0)
        else:
            cash = V - np.sum(theta * values, axis=1)
            V = cash * np.exp(smp.R - R_prev) + np.sum(theta * new_values, axis=1)
        if j == n_steps:
            break
        target = sensitivities_call(par, mk, x, maturity - u, log_strike, damping, oracle)
        A = np.stack([s.as_array() for s in inst], axis=-1)
        theta = np.where(smp.survived[:, None], solve_batch(target.as_array(), A), 0.0)
        values, R_prev = new_values, smp.R
    payoff = np.where(smp.survived, np.maximum(smp.S - np.exp(log_strike), 0.0), 0.0)
    return HedgeExperiment(V - payoff, c0 * np.exp(smp.R) - payoff, c0, ~smp.survived)
