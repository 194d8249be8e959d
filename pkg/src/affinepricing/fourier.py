"""Damped Fourier inversion of the discounted-moment function.

All prices use integrals of the form::

    (e^{-p k} / pi) * int_0^inf Re(exp(-i y k) h(shift + i y) kernel(y)) dy

evaluated by composite Gauss-Legendre panels that are appended until the L1
bound of the last panel is negligible. One set of moment samples is shared by
every strike and every state in a batch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DampingInfeasibleError, QuadratureError
from .moments import MomentOracle

DEFAULT_LADDER = (0.5, 0.75, 1.0, 1.5, 2.0, 3.0)
CLAMP_TOL = 1e-8
ROUNDOFF = 1e-12


@dataclass(frozen=True)
class QuadratureSpec:
    """Discretization of the half-line Fourier integrals.

    ``gauss-legendre`` uses ``n_points`` nodes per panel of width ``panel_width``
    (default ``20 / max(t, 0.05)``) and stops adding panels once the last one is
    below ``rel_tol`` of the running price (plus ``abs_tol``), or at ``y_max``.
    ``trapezoid`` uses ``n_points`` equally spaced nodes on ``[0, y_max]``.
    """

    rule: str = "gauss-legendre"
    n_points: int = 32
    y_max: float = 4096.0
    panel_width: float | None = None
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14

    def __post_init__(self):
        if self.rule not in ("gauss-legendre", "trapezoid"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if not self.y_max > 0:
            raise ValueError("y_max must be positive")
        if self.n_points < 16:
            raise ValueError("n_points must be at least 16")


@dataclass
class FourierPrice:
    """Prices with quadrature diagnostics; ``price`` has shape ``(K,)`` or ``(P, K)``."""

    price: np.ndarray
    damping: float
    y_max: float
    tail_estimate: np.ndarray
    delta: np.ndarray | None = None  # d price / d x, trailing axis of length n


@dataclass
class DigitalPrices:
    asset_or_nothing: np.ndarray
    binary: np.ndarray
    call: np.ndarray


def _states(x):
    x = np.asarray(x, dtype=float)
    return np.atleast_2d(x), x.ndim == 1


def _check_feasible(oracle: MomentOracle, t: float, powers, damping: float) -> None:
    powers = np.atleast_1d(np.asarray(powers, dtype=float))
    finite = oracle.is_finite(t, powers)
    if not np.all(finite):
        bad = powers[~finite][0]
        expl = None
        if hasattr(oracle, "hparams"):
            from .heston import explosion_time
            expl = explosion_time(oracle.hparams, bad)
        raise DampingInfeasibleError(
            f"damping p={damping:g} infeasible: moment of order {bad:g} is infinite at t={t:g}; "
            "reduce the damping", damping=damping, explosion_time=expl)


def _panels(quad: QuadratureSpec, t: float, pole_distance: float | None = None, k_max: float = 0.0):
    """Yield ``(y, w)`` node/weight arrays panel by panel.

    Panels near the origin are graded geometrically from ``pole_distance`` (the
    distance of the nearest kernel pole to the real axis) up to the regular
    width, so that the rational kernel is resolved for small dampings. The
    regular width holds at most eight periods of ``exp(-i y k)`` for ``|k| <= k_max``.
    """
    if quad.rule == "trapezoid":
        y = np.linspace(0.0, quad.y_max, quad.n_points)
        w = np.full(y.size, y[1] - y[0])
        w[[0, -1]] *= 0.5
        y[0] = 1e-6 * (y[1] - y[0])  # avoid the removable singularity of half-residue kernels
        yield y, w
        return
    nodes, wts = np.polynomial.legendre.leggauss(quad.n_points)
    width = quad.panel_width or 20.0 / max(t, 0.05)
    if not quad.panel_width and k_max > 0:
        width = min(width, 16.0 * np.pi / k_max)
    first = width / 32 if not pole_distance else min(2.0 * pole_distance, width)
    edges = [0.0]
    step = first
    while edges[-1] + step < width:
        edges.append(edges[-1] + step)
        step *= 2.0
    y0 = 0.0
    k = 1
    while y0 < quad.y_max:
        y1 = edges[k] if k < len(edges) else y0 + width
        y1 = min(y1, quad.y_max)
        k += 1
        half = 0.5 * (y1 - y0)
        yield y0 + half * (nodes + 1.0), half * wts
        y0 = y1


def damped_integral(oracle: MomentOracle, t: float, x, shift: float, kernel, ks, scale,
                    offset, quad: QuadratureSpec, greeks: bool = False,
                    pole_distance: float | None = None):
    """``int_0^inf Re(exp(-iyk) h(shift+iy) kernel(y)) dy`` for every strike and state.

    ``scale`` (K,) and ``offset`` (P, K) convert the integral into a price and are
    used only by the stopping rule. Returns ``(I, y_end, tail, H)`` where ``I`` and
    ``tail`` have shape ``(P, K)`` (tail in price units) and ``H`` (P, K, n) holds
    the state derivative of ``I`` when ``greeks`` is set. ``pole_distance`` grades
    the panels near the origin (see :func:`_panels`).
    """
    X, _ = _states(x)
    ks = np.asarray(ks, dtype=float)
    P, K = X.shape[0], ks.size
    total = np.zeros((P, K))
    H = np.zeros((P, K, X.shape[1])) if greeks else None
    tail = np.full((P, K), np.inf)
    y_end = 0.0
    for y, w in _panels(quad, t, pole_distance, float(np.max(np.abs(ks), initial=0.0))):
        a0, B, finite = oracle.coefficients(t, shift + 1j * y)
        if not np.all(finite):
            raise DampingInfeasibleError(
                f"moment infinite along Re z = {shift:g} at t={t:g}", damping=shift)
        with np.errstate(over="ignore"):
            f = np.exp(a0[None, :] + X @ B.T) * kernel(y)[None, :]
        fw = f * w[None, :]
        phase = np.exp(-1j * np.outer(y, ks))
        total += (fw @ phase).real
        if greeks:
            H += np.einsum("pj,jq,jk->pkq", fw, B, phase).real
        bsize = np.maximum(1.0, np.abs(B).max(axis=1)) if greeks else 1.0
        bound = (np.abs(f) * bsize) @ w
        tail = scale[None, :] * bound[:, None]
        y_end = float(y.max())
        price = scale[None, :] * total + offset
        if not np.all(np.isfinite(total)):
            raise QuadratureError("non-finite Fourier integrand")
        if quad.rule == "gauss-legendre" and np.all(tail <= quad.rel_tol * np.abs(price) + quad.abs_tol):
            break
    else:
        if quad.rule == "gauss-legendre":
            # remainder beyond y_max of an integrand decaying like 1/y^2 is about y_max |f(y_max)|
            tail = tail * (y_end / float(w.sum()))
            worst = float(np.max(tail))
            warnings.warn(f"Fourier integral truncated at y_max={quad.y_max:g}; tail bound {worst:.3e}",
                          RuntimeWarning, stacklevel=3)
    return total, y_end, tail, H


def _call_kernel(p):
    return lambda y: 1.0 / ((p + 1j * y) * (p + 1.0 + 1j * y))


def _clamp(price: np.ndarray, tail=0.0) -> np.ndarray:
    # a negative value inside the truncation bound is already reported by the truncation warning
    if np.any(price < -(CLAMP_TOL + tail)):
        raise QuadratureError(f"negative option price {price.min():.3e}: quadrature misconfigured")
    if np.any(price < -ROUNDOFF):
        warnings.warn(f"clamped tiny negative price {price.min():.3e} to 0", RuntimeWarning, stacklevel=3)
    return np.maximum(price, 0.0)


def call_prices(oracle: MomentOracle, t: float, x, ks, p: float | None = None,
                quad: QuadratureSpec | None = None, greeks: bool = False) -> FourierPrice:
    """Discounted call prices ``E[e^{-R_t} (S_t - e^k)^+]`` for a batch of log-strikes.

    ``x`` may be a single state ``(n,)`` or a batch ``(P, n)``; prices then have
    shape ``(K,)`` or ``(P, K)``. With ``greeks`` the state gradient is returned in
    ``delta`` by differentiating under the integral.
    """
    quad = quad or QuadratureSpec()
    ks = np.atleast_1d(np.asarray(ks, dtype=float))
    X, single = _states(x)
    t = float(t)
    if t == 0.0:
        s = np.exp(oracle.log_spot(X))
        price = np.maximum(s[:, None] - np.exp(ks)[None, :], 0.0)
        delta = None
        if greeks:
            itm = (s[:, None] > np.exp(ks)[None, :]).astype(float)
            delta = (itm * s[:, None])[:, :, None] * oracle.epsilon[None, None, :]
        res = FourierPrice(price, float("nan") if p is None else p, 0.0, np.zeros_like(price), delta)
    else:
        if p is None:
            p = choose_damping(oracle, t, X[0], "call")
        if not p > 0:
            raise ValueError("call damping must be positive")
        _check_feasible(oracle, t, [p + 1.0], p)
        scale = np.exp(-p * ks) / np.pi
        total, y_end, tail, H = damped_integral(oracle, t, X, p + 1.0, _call_kernel(p), ks, scale,
                                                np.zeros((X.shape[0], ks.size)), quad, greeks,
                                                pole_distance=p)
        price = _clamp(scale[None, :] * total, tail)
        delta = scale[None, :, None] * H if greeks else None
        res = FourierPrice(price, float(p), y_end, tail, delta)
    if single:
        res.price = res.price[0]
        res.tail_estimate = res.tail_estimate[0]
        if res.delta is not None:
            res.delta = res.delta[0]
    return res


def call_price(oracle: MomentOracle, t: float, x, k: float, p: float | None = None,
               quad: QuadratureSpec | None = None) -> float:
    """Discounted price of a call with log-strike ``k``."""
    return float(call_prices(oracle, t, x, [k], p, quad).price[0])


def _sinh_moment_kernel(p):
    def kernel_minus(y):
        w1 = y - 1j * p
        return -0.5 / (w1 * w1 - 1j * w1)

    def kernel_plus(y):
        w2 = y + 1j * p
        return 0.5 / (w2 * w2 - 1j * w2)

    return kernel_minus, kernel_plus


def sinh_integrand(oracle: MomentOracle, t: float, x, p: float, y) -> np.ndarray:
    """``g_d(y) = (f(y - ip) - f(y + ip)) / 2`` with ``f`` the transform of the time value."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x = np.asarray(x, dtype=float)
    s0 = float(oracle.log_spot(x))
    h0, h1 = oracle.moment(t, x, [0.0, 1.0])

    def f(w):
        iw = 1j * w
        return (np.exp((1 + iw) * s0) / (1 + iw) * h0 - np.exp(iw * s0) / iw * h1
                - oracle.moment(t, x, 1 + iw) / (w * w - iw))

    return 0.5 * (f(y - 1j * p) - f(y + 1j * p))


def _sinh_elementary(k, s0, p, h0, h1):
    """Inverse transform of the bond and forward terms of ``g_d`` in closed form."""
    below = k < s0
    above = ~below
    out = h0 * np.exp((1 + p) * k) * below - h1 * np.exp(p * k) * below - h1 * np.exp(-p * k) * above
    if p < 1:
        out -= h0 * np.exp((1 - p) * k) * below
    else:
        out += h0 * np.exp((1 - p) * k) * above
    return 0.5 * out


def otm_price_sinh(oracle: MomentOracle, t: float, x, k, p: float = 0.5,
                   quad: QuadratureSpec | None = None) -> np.ndarray | float:
    """Time value of the out-of-the-money option with a ``1/sinh(pk)`` damping.

    Put value (with survival indicator) for ``k < log S0``, call value for
    ``k > log S0``. Needs ``1 - p`` and ``1 + p`` feasible and ``p != 1``.
    The bond and forward parts of the integrand are inverted exactly; only the
    moment part is integrated numerically.
    """
    quad = quad or QuadratureSpec()
    scalar = np.ndim(k) == 0
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    x = np.asarray(x, dtype=float)
    if not p > 0:
        raise ValueError("damping must be positive")
    if abs(p - 1.0) < 1e-12:
        raise ValueError("damping p = 1 puts a pole on the integration path")
    s0 = float(oracle.log_spot(x))
    if np.any(np.abs(ks - s0) < 1e-12):
        raise ValueError("at-the-money singular point; use call_price")
    if t == 0.0:
        s = np.exp(s0)
        out = np.where(ks < s0, np.maximum(np.exp(ks) - s, 0.0), np.maximum(s - np.exp(ks), 0.0))
        return float(out[0]) if scalar else out
    _check_feasible(oracle, t, [1.0 - p, 1.0 + p], p)
    # work with S_t / S0 and log-moneyness k - s0, so the damping sinh(p (k - s0)) vanishes only at the money
    spot = np.exp(s0)
    h0, h1 = oracle.moment(t, x, [0.0, 1.0]).real
    km_, kp_ = _sinh_moment_kernel(p)
    m = ks - s0
    sh = np.sinh(p * m)
    elem = _sinh_elementary(m, 0.0, p, h0, h1 / spot)
    offset = (spot * elem / sh)[None, :]
    scale_m = spot * np.exp(-(1.0 + p) * s0) / (np.pi * np.abs(sh))
    scale_p = spot * np.exp(-(1.0 - p) * s0) / (np.pi * np.abs(sh))
    Im, _, tail_m, _ = damped_integral(oracle, t, x, 1.0 + p, km_, ks, scale_m, offset, quad, pole_distance=p)
    Ip, _, tail_p, _ = damped_integral(oracle, t, x, 1.0 - p, kp_, ks, scale_p, offset, quad,
                                  pole_distance=min(p, abs(1.0 - p)))
    moment_part = (np.exp(-(1.0 + p) * s0) * Im[0] + np.exp(-(1.0 - p) * s0) * Ip[0]) / np.pi
    out = _clamp(spot * (elem + moment_part) / sh, (tail_m + tail_p)[0])
    return float(out[0]) if scalar else out


def _residue(p: float, value):
    if p < 0:
        return value
    if p == 0:
        return 0.5 * value
    return 0.0 * value


def digital_prices(oracle: MomentOracle, t: float, x, k, p: float, q: float,
                   quad: QuadratureSpec | None = None) -> DigitalPrices:
    """Asset-or-nothing ``a``, binary ``b`` and call ``c`` prices via residue-corrected inversion.

    ``p`` damps ``a`` and ``c`` (needs ``p + 1`` feasible), ``q`` damps ``b``
    (needs ``q`` feasible); either may be negative. A damping sitting on a pole
    takes half the residue.
    """
    quad = quad or QuadratureSpec()
    scalar = np.ndim(k) == 0
    ks = np.atleast_1d(np.asarray(k, dtype=float))
    x = np.asarray(x, dtype=float)
    if t == 0.0:
        s = np.exp(float(oracle.log_spot(x)))
        itm = (np.log(s) > ks).astype(float)
        res = DigitalPrices(s * itm, itm, np.maximum(s - np.exp(ks), 0.0))
    else:
        _check_feasible(oracle, t, [p + 1.0], p)
        _check_feasible(oracle, t, [q], q)
        h0, h1 = oracle.moment(t, x, [0.0, 1.0]).real
        ek = np.exp(ks)
        sp, sq = np.exp(-p * ks) / np.pi, np.exp(-q * ks) / np.pi

        Ra = np.full(ks.shape, _residue(p, h1))
        Rb = np.full(ks.shape, _residue(q, h0))
        if p < -1:
            Rc = h1 - ek * h0
        elif p == -1:
            Rc = h1 - 0.5 * ek * h0
        else:
            Rc = np.full(ks.shape, _residue(p, h1))

        Ia, _, _, _ = damped_integral(oracle, t, x, p + 1.0, lambda y: 1.0 / (p + 1j * y), ks, sp,
                                      Ra[None, :], quad, pole_distance=abs(p))
        Ib, _, _, _ = damped_integral(oracle, t, x, q, lambda y: 1.0 / (q + 1j * y), ks, sq,
                                      Rb[None, :], quad, pole_distance=abs(q))
        Ic, _, _, _ = damped_integral(oracle, t, x, p + 1.0, _call_kernel(p), ks, sp, Rc[None, :], quad,
                                      pole_distance=min(abs(p), abs(p + 1.0)))
        res = DigitalPrices(Ra + sp * Ia[0], Rb + sq * Ib[0], Rc + sp * Ic[0])
    if scalar:
        return DigitalPrices(float(res.asset_or_nothing[0]), float(res.binary[0]), float(res.call[0]))
    return res


def choose_damping(oracle: MomentOracle, t: float, x=None, target: str = "call",
                   ladder=DEFAULT_LADDER) -> float:
    """Largest damping on ``ladder`` whose required moments are finite at ``t``.

    ``call`` needs order ``p + 1``; ``digital`` needs ``p + 1`` and ``p``.
    """
    if target not in ("call", "digital"):
        raise ValueError(f"unknown damping target {target!r}")
    ladder = sorted(float(p) for p in ladder)
    if t == 0.0:
        return ladder[-1]
    plus = oracle.is_finite(t, np.array(ladder) + 1.0)
    ok = plus & oracle.is_finite(t, np.array(ladder)) if target == "digital" else plus
    feasible = [p for p, good in zip(ladder, ok) if good]
    if not feasible:
        raise DampingInfeasibleError("all dampings explode; widen ladder or shorten maturity",
                                     damping=ladder[0])
    return feasible[-1]
