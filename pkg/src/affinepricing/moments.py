"""Discounted moments ``h_{t,x}(z) = E_x[exp(-R_t) S_t^z 1{t < tau}]`` and bond prices.

A *moment oracle* maps ``(t, z)`` to log-affine coefficients ``(a0, B)`` with
``log h_{t,x}(z) = a0 + <B, x>``. Because the coefficients do not depend on
``x``, one Riccati solve prices a claim at every state, which is what the
hedging code relies on when it shifts the state by jump sizes.
"""

from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import MomentExplosionError
from .model import AffineParams, MarketSpec, check_structure, eval_G
from .riccati import DEFAULT_TOL, RiccatiSystem, solve_riccati, solve_riccati_batch

_CACHE_SIZE = 512


class MomentOracle:
    """Base class. Subclasses implement :meth:`_coefficients`."""

    n: int
    epsilon: np.ndarray
    e: float

    def __init__(self):
        self._cache: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def _coefficients(self, t: float, z: np.ndarray):
        raise NotImplementedError

    def government(self) -> "MomentOracle":
        """Oracle of the same model with the default intensity switched off."""
        raise NotImplementedError

    def coefficients(self, t: float, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(a0, B, finite)`` for each entry of ``z``.

        ``a0`` has shape ``(N,)``, ``B`` shape ``(N, n)``; ``finite`` flags rows whose
        Riccati solution did not explode before ``t``.
        """
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        key = (float(t), z.tobytes())
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        a0, B = self._coefficients(float(t), z)
        finite = np.isfinite(a0) & np.all(np.isfinite(B), axis=1)
        a0 = np.where(finite, a0, np.inf)
        B = np.where(finite[:, None], B, np.inf)
        for arr in (a0, B, finite):
            arr.setflags(write=False)
        out = (a0, B, finite)
        with self._lock:
            self._cache[key] = out
            if len(self._cache) > _CACHE_SIZE:
                self._cache.popitem(last=False)
        return out

    def moment(self, t: float, x, z) -> np.ndarray:
        """``h_{t,x}(z)``; shape ``(N,)`` for a single state, ``(P, N)`` for ``x`` of shape ``(P, n)``.

        Exploded entries are returned as ``inf``.
        """
        a0, B, finite = self.coefficients(t, z)
        x = np.asarray(x, dtype=float)
        with np.errstate(invalid="ignore", over="ignore"):
            logh = a0 + x @ np.where(finite[:, None], B, 0.0).T
            h = np.exp(logh)
        return np.where(finite, h, np.inf)

    def is_finite(self, t: float, z) -> np.ndarray:
        return self.coefficients(t, z)[2]

    def undiscounted(self) -> "MomentOracle":
        """Oracle of ``E_x[S_t^z 1{t < tau}]`` (no ``exp(-R_t)`` factor)."""
        raise NotImplementedError

    def log_spot(self, x) -> np.ndarray:
        """Current log stock price ``e + <epsilon, x>`` (before default)."""
        return self.e + np.asarray(x, dtype=float) @ self.epsilon


class AffineMoments(MomentOracle):
    """Moment oracle backed by the numerical Riccati solver.

    With ``discounted=False`` the rate loading is ``v = z`` instead of ``z - 1``,
    giving the plain expectation ``E_x[S_t^z 1{t < tau}]``.
    """

    def __init__(self, params: AffineParams, market: MarketSpec, tol: float = DEFAULT_TOL,
                 discounted: bool = True):
        super().__init__()
        self.discounted = discounted
        check_structure(params, market)
        self.params = params
        self.market = market.resolved(params.m)
        self.tol = tol
        self.n = params.n
        self.epsilon = self.market.epsilon
        self.e = self.market.e
        self._system = RiccatiSystem(params, self.market)
        self._gov = None

    def _coefficients(self, t, z):
        U = z[:, None] * self.epsilon[None, :]
        if t == 0.0:
            return z * self.e, U
        res = solve_riccati_batch(self.params, self.market, U, self._v(z), z, t, tol=self.tol,
                                  system=self._system)
        return z * self.e + res.A[-1], res.B[-1]

    def _v(self, z):
        return z - 1.0 if self.discounted else z

    def explosion_times(self, t: float, z) -> np.ndarray:
        """Explosion time of each row when integrating up to ``t`` (``inf`` if none)."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        res = solve_riccati_batch(self.params, self.market, z[:, None] * self.epsilon[None, :],
                                  self._v(z), z, t, tol=self.tol, system=self._system)
        return res.explosion_time

    def government(self) -> "AffineMoments":
        if self._gov is None:
            self._gov = AffineMoments(self.params, self.market.without_default(), self.tol,
                                      self.discounted)
        return self._gov

    def undiscounted(self) -> "AffineMoments":
        return AffineMoments(self.params, self.market, self.tol, discounted=False)


def discounted_moment(params: AffineParams, market: MarketSpec, x, t: float, z,
                      tol: float = DEFAULT_TOL) -> complex:
    """``exp(z e + A(t, z eps, z-1, z) + <B(t, z eps, z-1, z), x>)``.

    Raises :class:`MomentExplosionError` if the Riccati solution explodes before ``t``.
    """
    market = market.resolved(params.m)
    z = complex(z)
    sol = solve_riccati(params, market, z * market.epsilon, z - 1.0, z, t, tol=tol)
    if sol.exploded:
        raise MomentExplosionError(
            f"moment undefined/infinite at z={z}: Riccati explosion at t={sol.explosion_time:.6g} <= {t}",
            explosion_time=sol.explosion_time, z=z)
    return complex(np.exp(z * market.e + sol.A[-1] + sol.B[-1] @ np.asarray(x, dtype=float)))


def bond_price(params: AffineParams, market: MarketSpec, x, t: float, kind: str = "government",
               tol: float = DEFAULT_TOL) -> float:
    """Zero-coupon bond price with zero recovery (``corporate``) or default-free (``government``)."""
    if kind == "government":
        market = market.without_default()
    elif kind != "corporate":
        raise ValueError(f"unknown bond kind {kind!r}")
    return float(discounted_moment(params, market, x, t, 0.0, tol=tol).real)


def futures_price(params: AffineParams, market: MarketSpec, x, t: float,
                  tol: float = DEFAULT_TOL) -> float:
    """Undiscounted expectation ``E_x[S_t]`` from the transform at ``(u, v, w) = (eps, 1, 1)``."""
    market = market.resolved(params.m)
    sol = solve_riccati(params, market, market.epsilon.astype(complex), 1.0, 1.0, t, tol=tol)
    if sol.exploded:
        raise MomentExplosionError("E[S_t] is infinite", explosion_time=sol.explosion_time)
    return float(np.exp(market.e + sol.A[-1] + sol.B[-1] @ np.asarray(x, dtype=float)).real)


class MartingaleCheck(NamedTuple):
    is_martingale_sufficient: bool
    residuals: np.ndarray
    beta_JJ_zero: bool


def check_martingale(params: AffineParams, market: MarketSpec, atol: float = 1e-12) -> MartingaleCheck:
    """Sufficient condition ``G_i(eps, 0, 1) = 0`` for all i and ``beta_JJ = 0``."""
    market = market.resolved(params.m)
    G0, G = eval_G(params, market, market.epsilon, 0.0, 1.0)
    residuals = np.concatenate([[G0], G])
    bjj_zero = not np.any(params.beta[params.m:, params.m:])
    ok = bool(np.all(np.abs(residuals) < atol) and bjj_zero)
    return MartingaleCheck(ok, residuals, bjj_zero)


@dataclass
class DomainProbe:
    t: float
    real_interval: tuple[float, float]
    probe_points: list[tuple[float, bool]]


def probe_domain(params: AffineParams, market: MarketSpec, t: float, p_min: float, p_max: float,
                 n_probe: int, tol: float = DEFAULT_TOL) -> DomainProbe:
    """Scan real powers for finiteness of the moment at maturity ``t``.

    ``real_interval`` is bounded by the nearest non-finite probes on either side of
    0 (or by ``p_min``/``p_max`` when every probe on that side is finite).
    """
    if not p_min < 0 < p_max:
        raise ValueError("need p_min < 0 < p_max")
    ps = np.linspace(p_min, p_max, int(n_probe))
    oracle = AffineMoments(params, market, tol)
    finite = oracle.is_finite(t, ps) if t > 0 else np.ones(ps.size, dtype=bool)
    lo, hi = p_min, p_max
    left = [p for p, ok in zip(ps, finite) if p < 0 and not ok]
    right = [p for p, ok in zip(ps, finite) if p > 0 and not ok]
    if left:
        lo = max(left)
    if right:
        hi = min(right)
    return DomainProbe(float(t), (float(lo), float(hi)), [(float(p), bool(ok)) for p, ok in zip(ps, finite)])
