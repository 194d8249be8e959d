"""Approximation of European payoffs by bonds, power payoffs and calls.

A payoff ``phi`` is written on ``[0, s_star]`` as::

    phi(s) ~ phi(0) + sum_i v_i s^{p_i} 1{s > 0} + sum_j w_j (s - K_j)^+

with weights from a rho-weighted least-squares fit on a uniform grid. The
``phi(0)`` leg is a government bond and is priced exactly; the remaining legs are
priced from the discounted-moment function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import MomentExplosionError
from .fourier import QuadratureSpec, call_prices, choose_damping
from .moments import MomentOracle

DROP_TOL = 1e-12


_DENSITY_ALIASES = {"paper-rho": "peaked"}


@dataclass(frozen=True)
class WeightDensity:
    """Nonnegative weight on ``[0, s_star]``: ``peaked``, ``uniform`` or ``tabulated``.

    ``peaked`` is ``exp(-10 s)`` below 1/2, ``exp(-10 |s - 1|)`` on ``[1/2, 3/2]`` and
    ``exp(-5)`` beyond, concentrating accuracy near the money. ``scale``
    stretches the built-in shapes, ``rho(s / scale)``.
    """

    kind: str = "peaked"
    knots: np.ndarray | None = None
    values: np.ndarray | None = None
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", _DENSITY_ALIASES.get(self.kind, self.kind))
        if self.kind not in ("peaked", "uniform", "tabulated"):
            raise ValueError(f"unknown density {self.kind!r}")
        if self.kind == "tabulated":
            knots = np.asarray(self.knots, dtype=float)
            values = np.asarray(self.values, dtype=float)
            if knots.shape != values.shape or knots.size < 2 or np.any(np.diff(knots) <= 0):
                raise ValueError("tabulated density needs increasing knots and matching values")
            if np.any(values < 0) or not np.all(np.isfinite(values)):
                raise ValueError("density values must be finite and nonnegative")
            object.__setattr__(self, "knots", knots)
            object.__setattr__(self, "values", values)

    @classmethod
    def tabulated(cls, knots, values) -> "WeightDensity":
        return cls("tabulated", knots, values)

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float) / self.scale
        if self.kind == "uniform":
            return np.ones_like(s)
        if self.kind == "tabulated":
            return np.interp(s, self.knots, self.values)
        return np.where(s < 0.5, np.exp(-10.0 * s),
                        np.where(s <= 1.5, np.exp(-10.0 * np.abs(s - 1.0)), np.exp(-5.0)))


def _as_density(rho) -> WeightDensity:
    if isinstance(rho, WeightDensity):
        return rho
    return WeightDensity(rho)


@dataclass
class PayoffBasis:
    """Bond + power + call basis and, once fitted, its weights."""

    powers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    strikes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    s_star: float = 3.0
    include_bond: bool = True
    grid: int = 2001
    power_weights: np.ndarray | None = None
    strike_weights: np.ndarray | None = None
    phi_zero: float = 0.0
    residual: float | None = None
    rms: float | None = None
    dropped: list = field(default_factory=list)

    def __post_init__(self):
        self.powers = np.atleast_1d(np.asarray(self.powers, dtype=float))
        self.strikes = np.atleast_1d(np.asarray(self.strikes, dtype=float))
        if self.powers.size > 1 and np.any(np.diff(self.powers) <= 0):
            raise ValueError("powers must be strictly increasing")
        if self.strikes.size > 1 and np.any(np.diff(self.strikes) <= 0):
            raise ValueError("strikes must be strictly increasing")
        if np.any(self.strikes <= 0) or np.any(self.strikes > self.s_star):
            raise ValueError("strikes must lie in (0, s_star]")
        if not self.s_star > 0:
            raise ValueError("s_star must be positive")
        if self.grid < 3:
            raise ValueError("grid needs at least 3 points")
        if self.powers.size + self.strikes.size == 0 and not self.include_bond:
            raise ValueError("empty basis")

    @property
    def size(self) -> int:
        return self.powers.size + self.strikes.size

    @property
    def fitted(self) -> bool:
        return self.power_weights is not None

    def labels(self) -> list[str]:
        return [f"power:{p:g}" for p in self.powers] + [f"call:{k:g}" for k in self.strikes]

    def columns(self, s) -> np.ndarray:
        """Basis functions at ``s``; shape ``(len(s), f + g)``."""
        s = np.asarray(s, dtype=float)
        pos = s > 0
        with np.errstate(divide="ignore"):
            pw = np.where(pos[:, None], np.power(np.where(pos, s, 1.0)[:, None], self.powers[None, :]), 0.0)
        calls = np.maximum(s[:, None] - self.strikes[None, :], 0.0)
        return np.concatenate([pw, calls], axis=1)

    def weights(self) -> np.ndarray:
        if not self.fitted:
            raise ValueError("basis has not been fitted")
        return np.concatenate([self.power_weights, self.strike_weights])

    def evaluate(self, s) -> np.ndarray:
        """The fitted approximation ``phi(0) + sum v s^p + sum w (s - K)^+``."""
        return self.phi_zero + self.columns(s) @ self.weights()

    def with_weights(self, power_weights, strike_weights, phi_zero=None) -> "PayoffBasis":
        return replace(self, power_weights=np.asarray(power_weights, dtype=float),
                       strike_weights=np.asarray(strike_weights, dtype=float),
                       phi_zero=self.phi_zero if phi_zero is None else float(phi_zero),
                       dropped=list(self.dropped))

    def __add__(self, other: "PayoffBasis") -> "PayoffBasis":
        """Portfolio of two fitted approximations (legs are merged, weights added)."""
        powers = np.union1d(self.powers, other.powers)
        strikes = np.union1d(self.strikes, other.strikes)
        pw = np.zeros(powers.size)
        sw = np.zeros(strikes.size)
        for basis in (self, other):
            pw[np.searchsorted(powers, basis.powers)] += basis.power_weights
            sw[np.searchsorted(strikes, basis.strikes)] += basis.strike_weights
        return PayoffBasis(powers, strikes, max(self.s_star, other.s_star),
                           self.include_bond or other.include_bond, max(self.grid, other.grid),
                           pw, sw, self.phi_zero + other.phi_zero)


def _grid(basis: PayoffBasis):
    s = np.linspace(0.0, basis.s_star, basis.grid)
    w = np.full(s.size, s[1] - s[0])
    w[[0, -1]] *= 0.5
    return s, w


def gram_schmidt(F: np.ndarray, weights: np.ndarray, drop_tol: float = DROP_TOL):
    """Modified Gram-Schmidt (two passes) in the inner product ``sum weights * u * v``.

    Returns ``(Q, R, kept)``: ``Q`` has orthonormal columns, ``F[:, kept] = Q @ R``
    with ``R`` upper triangular. Columns whose pivot falls below ``drop_tol`` times
    the largest column norm seen so far are dropped.
    """
    N, M = F.shape
    sw = np.sqrt(weights)
    Q = np.zeros((N, M))
    R = np.zeros((M, M))
    kept = []
    largest = 0.0
    for j in range(M):
        v = F[:, j] * sw
        largest = max(largest, np.linalg.norm(v))
        r = len(kept)
        col = np.zeros(r)
        for _ in range(2):
            for i in range(r):
                proj = Q[:, i] @ v
                col[i] += proj
                v = v - proj * Q[:, i]
        pivot = np.linalg.norm(v)
        if pivot == 0.0 or pivot <= drop_tol * largest:
            continue
        Q[:, r] = v / pivot
        R[:r, r] = col
        R[r, r] = pivot
        kept.append(j)
    k = len(kept)
    with np.errstate(divide="ignore", invalid="ignore"):
        Q = np.where(sw[:, None] > 0, Q[:, :k] / sw[:, None], 0.0)
    return Q, R[:k, :k], kept


def fit_weights(payoff, basis: PayoffBasis, rho="peaked", drop_tol: float = DROP_TOL) -> PayoffBasis:
    """Least-squares weights of ``payoff(s) - payoff(0)`` in the basis, weighted by ``rho``.

    Returns a fitted copy with ``residual`` (weighted L2 norm of the misfit on the
    grid), ``rms`` (residual normalised by the total weight) and ``dropped`` (labels
    of basis functions removed as linearly dependent).
    """
    rho = _as_density(rho)
    s, w = _grid(basis)
    omega = w * rho(s)
    if np.any(omega < 0) or not np.all(np.isfinite(omega)):
        raise ValueError("weight density must be finite and nonnegative")
    phi = np.asarray(payoff(s), dtype=float)
    phi0 = float(phi[0]) if basis.include_bond else 0.0
    target = phi - phi0
    if not np.all(np.isfinite(target)):
        raise ValueError("payoff is not finite on the regression grid")
    F = basis.columns(s)
    Q, R, kept = gram_schmidt(F, omega, drop_tol)
    coef = Q.T @ (omega * target)
    weights = np.zeros(basis.size)
    if kept:
        weights[kept] = solve_triangular(R, coef)
    fitted = target - (Q @ coef if kept else 0.0)
    residual = float(np.sqrt(np.sum(omega * fitted ** 2)))
    labels = basis.labels()
    dropped = [labels[j] for j in range(basis.size) if j not in set(kept)]
    if dropped:
        warnings.warn(f"dropped {len(dropped)} linearly dependent basis function(s): "
                      + ", ".join(dropped[:5]) + ("..." if len(dropped) > 5 else ""),
                      RuntimeWarning, stacklevel=2)
    f = basis.powers.size
    out = basis.with_weights(weights[:f], weights[f:], phi0)
    out.residual = residual
    out.rms = residual / float(np.sqrt(np.sum(omega)))
    out.dropped = dropped
    return out


def weighted_error(payoff, basis: PayoffBasis, rho="peaked") -> float:
    """Weighted L2 distance on the regression grid between ``payoff`` and the fitted basis."""
    rho = _as_density(rho)
    s, w = _grid(basis)
    diff = np.asarray(payoff(s), dtype=float) - basis.evaluate(s)
    return float(np.sqrt(np.sum(w * rho(s) * diff ** 2)))


def truncated_log(k: float):
    """``phi(s) = log(s) v k`` (equal to ``k`` at ``s = 0``)."""
    def phi(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore"):
            return np.maximum(np.log(s), k)
    return phi


def reference_bases(s_star: float = 3.0, grid: int = 2001) -> dict[int, PayoffBasis]:
    """Three 101-instrument bases: powers only, calls only, and half of each."""
    return {
        1: PayoffBasis(powers=np.round(np.arange(1, 101) * 0.05, 10), s_star=s_star, grid=grid),
        2: PayoffBasis(strikes=np.round(np.arange(1, 101) * 0.03, 10), s_star=s_star, grid=grid),
        3: PayoffBasis(powers=np.round(np.arange(1, 51) * 0.1, 10),
                       strikes=np.round(np.arange(1, 51) * 0.06, 10), s_star=s_star, grid=grid),
    }


@dataclass
class PricingContext:
    """Where and when a claim is priced: oracle, state ``x`` and maturity ``t``."""

    oracle: MomentOracle
    x: np.ndarray
    t: float
    quad: QuadratureSpec | None = None
    damping: float | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = float(self.t)

    def call_damping(self) -> float:
        if self.damping is not None:
            return self.damping
        return choose_damping(self.oracle, self.t, None, "call")


def leg_prices(basis: PayoffBasis, ctx: PricingContext) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Government bond, power-payoff and call prices of the basis legs.

    ``ctx.x`` may be a single state or a batch ``(P, n)``; shapes follow it.
    """
    oracle = ctx.oracle
    bond = oracle.government().moment(ctx.t, ctx.x, [0.0])[..., 0].real
    if basis.powers.size:
        finite = oracle.is_finite(ctx.t, basis.powers)
        if not np.all(finite):
            bad = basis.powers[~finite]
            raise MomentExplosionError(f"power leg p={bad[0]:g} infeasible at t={ctx.t:g}",
                                       z=float(bad[0]))
        powers = oracle.moment(ctx.t, ctx.x, basis.powers).real
    else:
        powers = np.zeros(np.shape(bond) + (0,))
    if basis.strikes.size:
        calls = call_prices(oracle, ctx.t, ctx.x, np.log(basis.strikes), ctx.call_damping(), ctx.quad).price
    else:
        calls = np.zeros(np.shape(bond) + (0,))
    return bond, powers, calls


def approx_price(basis: PayoffBasis, ctx: PricingContext):
    """``phi(0) P_gov + sum v_i h(p_i) + sum w_j c(log K_j)``."""
    bond, powers, calls = leg_prices(basis, ctx)
    return basis.phi_zero * bond + powers @ basis.power_weights + calls @ basis.strike_weights


@dataclass
class VarianceSwapQuote:
    """``price`` is the truncated-log approximation.

    ``stopped_integral_correction`` is the mean of the neglected default-time
    term for a constant intensity ``c``: ``2 c P(tau > t)`` (NaN otherwise).
    """

    price: float
    log_truncation: float
    F0: float
    expected_truncated_log: float
    basis: PayoffBasis
    stopped_integral_correction: float = float("nan")

    @property
    def corrected_price(self) -> float:
        return self.price + self.stopped_integral_correction


def variance_swap_basis(F0: float, k: float, grid: int = 2001) -> PayoffBasis:
    """Bond plus calls at ``0.03 F0, ..., 3 F0`` and at the truncation ``e^k``.

    Calls only: mixing in powers makes the weights large enough to amplify
    moment errors.
    """
    strikes = np.union1d(np.round(np.arange(1, 101) * 0.03, 10) * F0, [np.exp(k)])
    return PayoffBasis(strikes=strikes, s_star=3.0 * F0, grid=grid)


def variance_swap_price(ctx: PricingContext, K: float, F0: float | None = None,
                        C: float | None = None, basis: PayoffBasis | None = None,
                        rho=None, gamma_zero: bool | None = None) -> VarianceSwapQuote:
    """Approximate value of a capped variance swap on the futures price of ``S_t``.

    Uses ``E[Sigma_t] ~ (2/t) E[log F0 - (log S_t v k)] - K`` with
    ``k = log F0 - t (C + K) / 2`` and ``C = 2.5 K`` by default. The expectation
    is the plain (undiscounted) one and the truncated log is replaced by its
    fitted approximation. The stopped stochastic integral over
    ``[0, tau]`` on default paths is dropped; for a constant intensity its
    contribution is returned separately in ``stopped_integral_correction``.
    Paths whose realized variance reaches the cap before default are not
    modelled, so the approximation degrades when ``C`` is small relative to the
    variance of ``log S_t``.
    """
    t = ctx.t
    if not K > 0:
        raise ValueError("variance strike K must be positive")
    C = 2.5 * K if C is None else float(C)
    if not C > K:
        raise ValueError("cap C must exceed K")
    market = getattr(ctx.oracle, "market", None)
    if gamma_zero is None:
        gamma_zero = market is None or not np.any(market.gamma)
    if not gamma_zero:
        warnings.warn("approximation bias: stopped-integral term nonzero for stochastic default intensity",
                      RuntimeWarning, stacklevel=2)
    plain = ctx.oracle.undiscounted()
    if F0 is None:
        F0 = float(plain.moment(t, ctx.x, [1.0])[0].real)
    k = float(np.log(F0) - t * (C + K) / 2.0)
    basis = basis or variance_swap_basis(F0, k)
    rho = rho or WeightDensity("peaked", scale=F0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fitted = fit_weights(truncated_log(k), basis, rho)
    plain_ctx = PricingContext(plain, ctx.x, t, ctx.quad, ctx.damping)
    expected = float(approx_price(fitted, plain_ctx))
    price = 2.0 / t * (np.log(F0) - expected) - K
    correction = float("nan")
    if gamma_zero and market is not None:
        # E[1{tau <= t} int_0^tau dF/F] = -c t P(tau > t) for a constant intensity c
        survival = float(plain.moment(t, ctx.x, [0.0])[0].real)
        correction = 2.0 * market.c * survival
    return VarianceSwapQuote(float(price), k, float(F0), expected, fitted, correction)
