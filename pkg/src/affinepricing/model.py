"""Affine model data, admissibility checks and the generalized Riccati right-hand sides.

The state process X lives on D = R_+^m x R^(n-m). Its generator is parametrised by
``(a, alpha, b, beta, nu, mu)`` and the traded quantities by a :class:`MarketSpec`::

    s_t      = e + <epsilon, X_t>
    r_t      = d + <delta, X_I,t>
    lambda_t = c + <gamma, X_I,t>
    S_t      = exp(s_t + R_t + Lambda_t) 1{t < tau}

Jump measures are finite sums of weighted Dirac masses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import ModelStructureError

_SYM_TOL = 1e-12


class Jump(NamedTuple):
    weight: float
    point: tuple


def _as_jumps(items, n: int) -> tuple[np.ndarray, np.ndarray]:
    weights, points = [], []
    for item in items:
        if isinstance(item, dict):
            w, y = item["weight"], item["point"]
        else:
            w, y = item
        y = np.asarray(y, dtype=float)
        if y.shape != (n,):
            raise ModelStructureError(f"jump point {y.tolist()} must have length {n}")
        weights.append(float(w))
        points.append(y)
    if not weights:
        return np.zeros(0), np.zeros((0, n))
    return np.asarray(weights), np.vstack(points)


def chi(xi: np.ndarray) -> np.ndarray:
    """Componentwise truncation ``(1 ^ |xi_k|) sign(xi_k)`` (zero where xi_k = 0)."""
    xi = np.asarray(xi, dtype=float)
    return np.sign(xi) * np.minimum(1.0, np.abs(xi))


@dataclass(frozen=True, eq=False)
class AffineParams:
    """Generator data of the affine state process.

    ``nu`` and ``mu`` accept sequences of ``(weight, point)`` pairs (or dicts with
    those keys); ``mu`` holds one such sequence per nonnegative component.
    """

    n: int
    m: int
    a: np.ndarray
    alpha: Sequence[np.ndarray]
    b: np.ndarray
    beta: np.ndarray
    nu: Sequence = ()
    mu: Sequence = ()

    nu_weights: np.ndarray = field(init=False, repr=False)
    nu_points: np.ndarray = field(init=False, repr=False)
    mu_weights: tuple = field(init=False, repr=False)
    mu_points: tuple = field(init=False, repr=False)

    def __post_init__(self):
        n, m = int(self.n), int(self.m)
        if n < 1:
            raise ModelStructureError("n must be a positive integer")
        if not 0 <= m <= n:
            raise ModelStructureError(f"m={m} must lie in [0, n={n}]")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "m", m)

        a = np.asarray(self.a, dtype=float)
        if a.shape != (n, n):
            raise ModelStructureError(f"a must be {n}x{n}, got shape {a.shape}")
        alpha = np.asarray(self.alpha, dtype=float).reshape(-1, n, n) if len(self.alpha) else np.zeros((0, n, n))
        if alpha.shape[0] != m:
            raise ModelStructureError(f"alpha must hold m={m} matrices, got {alpha.shape[0]}")
        b = np.asarray(self.b, dtype=float)
        if b.shape != (n,):
            raise ModelStructureError(f"b must have length {n}")
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != (n, n):
            raise ModelStructureError(f"beta must be {n}x{n}, got shape {beta.shape}")
        mu = list(self.mu)
        if len(mu) not in (0, m):
            raise ModelStructureError(f"mu must hold m={m} jump lists, got {len(mu)}")
        if not mu:
            mu = [()] * m

        for arr in (a, alpha, b, beta):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "beta", beta)

        nw, npts = _as_jumps(self.nu, n)
        object.__setattr__(self, "nu", tuple(Jump(w, tuple(y)) for w, y in zip(nw, npts)))
        object.__setattr__(self, "nu_weights", nw)
        object.__setattr__(self, "nu_points", npts)
        mws, mps, mus = [], [], []
        for lst in mu:
            w, y = _as_jumps(lst, n)
            mws.append(w)
            mps.append(y)
            mus.append(tuple(Jump(wi, tuple(yi)) for wi, yi in zip(w, y)))
        object.__setattr__(self, "mu", tuple(mus))
        object.__setattr__(self, "mu_weights", tuple(mws))
        object.__setattr__(self, "mu_points", tuple(mps))

    @property
    def I(self) -> slice:
        return slice(0, self.m)

    @property
    def J(self) -> slice:
        return slice(self.m, self.n)

    @property
    def n_jump_types(self) -> tuple[int, tuple[int, ...]]:
        return len(self.nu_weights), tuple(len(w) for w in self.mu_weights)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "a": self.a.tolist(),
            "alpha": [al.tolist() for al in self.alpha],
            "b": self.b.tolist(),
            "beta": self.beta.tolist(),
            "nu": [{"weight": float(w), "point": list(map(float, y))} for w, y in zip(self.nu_weights, self.nu_points)],
            "mu": [
                [{"weight": float(w), "point": list(map(float, y))} for w, y in zip(ws, ys)]
                for ws, ys in zip(self.mu_weights, self.mu_points)
            ],
        }


@dataclass(frozen=True, eq=False)
class MarketSpec:
    """Log-price, short-rate and default-intensity loadings."""

    e: float
    epsilon: np.ndarray
    d: float = 0.0
    delta: np.ndarray | None = None
    c: float = 0.0
    gamma: np.ndarray | None = None

    def __post_init__(self):
        eps = np.asarray(self.epsilon, dtype=float).ravel()
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "e", float(self.e))
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "c", float(self.c))
        for name in ("delta", "gamma"):
            val = getattr(self, name)
            arr = np.zeros(0) if val is None else np.asarray(val, dtype=float).ravel()
            object.__setattr__(self, name, arr)

    def resolved(self, m: int) -> "MarketSpec":
        """Return a copy with empty ``delta``/``gamma`` expanded to zero m-vectors."""
        delta = self.delta if self.delta.size else np.zeros(m)
        gamma = self.gamma if self.gamma.size else np.zeros(m)
        return MarketSpec(self.e, self.epsilon, self.d, delta, self.c, gamma)

    def without_default(self) -> "MarketSpec":
        """The same market with zero default intensity (government-bond world)."""
        return MarketSpec(self.e, self.epsilon, self.d, self.delta, 0.0, np.zeros_like(self.gamma))

    def with_log_shift(self, shift: float) -> "MarketSpec":
        return MarketSpec(self.e + shift, self.epsilon, self.d, self.delta, self.c, self.gamma)

    def to_dict(self) -> dict:
        return {
            "e": self.e,
            "epsilon": self.epsilon.tolist(),
            "d": self.d,
            "delta": self.delta.tolist(),
            "c": self.c,
            "gamma": self.gamma.tolist(),
        }


def model_key(params: AffineParams, market: MarketSpec) -> str:
    """Stable hash of a model, used for cache keys and CSV metadata."""
    blob = json.dumps({"params": params.to_dict(), "market": market.to_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


# --------------------------------------------------------------------------- #
# Admissibility
# --------------------------------------------------------------------------- #


class Violation(NamedTuple):
    condition: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, condition: str, message: str) -> None:
        self.violations.append(Violation(condition, message))

    def __bool__(self) -> bool:
        return self.ok

    def __str__(self) -> str:
        if self.ok:
            return "OK"
        return "\n".join(f"{v.condition}: {v.message}" for v in self.violations)


def _is_psd(mat: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(mat))))
    return bool(np.min(np.linalg.eigvalsh(mat)) >= -_SYM_TOL * scale)


def _is_symmetric(mat: np.ndarray) -> bool:
    return bool(np.allclose(mat, mat.T, atol=_SYM_TOL, rtol=0.0))


def check_structure(params: AffineParams, market: MarketSpec) -> None:
    """Raise :class:`ModelStructureError` if market dimensions disagree with the params."""
    n, m = params.n, params.m
    if market.epsilon.shape != (n,):
        raise ModelStructureError(f"epsilon must have length n={n}")
    for name in ("delta", "gamma"):
        size = getattr(market, name).size
        if size not in (0, m):
            raise ModelStructureError(f"{name} must have length m={m}, got {size}")


def validate_params(params: AffineParams, market: MarketSpec) -> ValidationReport:
    """List every violated admissibility condition; an empty report means admissible."""
    check_structure(params, market)
    market = market.resolved(params.m)
    rep = ValidationReport()
    I, J, m = params.I, params.J, params.m
    a = params.a

    if not _is_symmetric(a):
        rep.add("diffusion-constant", "a is not symmetric")
    elif not _is_psd(a):
        rep.add("diffusion-constant", "a is not positive semi-definite")
    if m and np.any(np.abs(a[I, I]) > _SYM_TOL):
        rep.add("diffusion-constant", "a_II must vanish")

    for i, al in enumerate(params.alpha):
        if not _is_symmetric(al):
            rep.add("diffusion-linear", f"alpha_{i + 1} is not symmetric")
        elif not _is_psd(al):
            rep.add("diffusion-linear", f"alpha_{i + 1} is not positive semi-definite")
        block = al[I, I].copy()
        block[i, i] = 0.0
        if np.any(np.abs(block) > _SYM_TOL):
            rep.add("diffusion-linear", f"alpha_{i + 1},II must vanish except the ({i + 1},{i + 1}) entry")

    if np.any(params.b[I] < 0):
        rep.add("drift-constant", "b must lie in D (b_I >= 0)")

    beta = params.beta
    if m and np.any(np.abs(beta[I, J]) > 0):
        rep.add("drift-linear", "beta_IJ must vanish")
    if m:
        off = beta[I, I] - np.diag(np.diag(beta[I, I]))
        if np.any(off < 0):
            rep.add("drift-linear", "beta_II must have nonnegative off-diagonal entries")

    def _check_jumps(label, weights, points):
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            rep.add(label, "jump weights must be strictly positive and finite")
        if len(points):
            if np.any(np.all(points == 0, axis=1)):
                rep.add(label, "jump points must differ from 0")
            if m and np.any(points[:, I] < 0):
                rep.add(label, "jump points must lie in D (nonnegative I components)")
            if len({tuple(p) for p in points}) != len(points):
                rep.add(label, "jump points must be distinct")

    _check_jumps("jumps-constant", params.nu_weights, params.nu_points)
    for i, (w, y) in enumerate(zip(params.mu_weights, params.mu_points)):
        _check_jumps(f"jumps-linear mu_{i + 1}", w, y)

    if market.d < 0 or np.any(market.delta < 0):
        rep.add("rate", "(d, delta) must be nonnegative")
    if market.c < 0 or np.any(market.gamma < 0):
        rep.add("intensity", "(c, gamma) must be nonnegative")
    return rep


# --------------------------------------------------------------------------- #
# Generalized Riccati right-hand sides
# --------------------------------------------------------------------------- #


class RiccatiRHS:
    """Vectorised evaluation of ``(G_0, G_1..G_m)`` for batches of ``(u, v, w)``.

    Instances are immutable after construction and safe to share between threads.
    """

    def __init__(self, params: AffineParams, market: MarketSpec):
        check_structure(params, market)
        market = market.resolved(params.m)
        self.params = params
        self.market = market
        n, m = params.n, params.m
        self.n, self.m = n, m
        self.a = params.a
        self.b = params.b
        self.alpha = params.alpha
        self.beta_I = params.beta[:, :m]  # columns i in I
        self.d, self.delta = market.d, market.delta
        self.c, self.gamma = market.c, market.gamma
        self.has_a = bool(np.any(params.a))

        jmask = np.zeros(n)
        jmask[m:] = 1.0
        self.nu_w = params.nu_weights
        self.nu_y = params.nu_points
        self.nu_chi = chi(params.nu_points) * jmask if len(params.nu_points) else np.zeros((0, n))
        self.mu_w, self.mu_y, self.mu_chi = [], [], []
        for i in range(m):
            mask = jmask.copy()
            mask[i] = 1.0
            y = params.mu_points[i]
            self.mu_w.append(params.mu_weights[i])
            self.mu_y.append(y)
            self.mu_chi.append(chi(y) * mask if len(y) else np.zeros((0, n)))

    @staticmethod
    def _jump_term(U, weights, points, chis):
        if not len(weights):
            return 0.0
        return (np.expm1(U @ points.T) - U @ chis.T) @ weights

    def __call__(self, U, V, W):
        """Return ``(G0, G)`` with shapes ``(N,)`` and ``(N, m)`` for ``U`` of shape ``(N, n)``."""
        U = np.asarray(U, dtype=complex)
        V = np.asarray(V, dtype=complex)
        W = np.asarray(W, dtype=complex)
        G0 = U @ self.b + self.d * V + self.c * (W - 1.0)
        if self.has_a:
            G0 = G0 + np.einsum("nk,kl,nl->n", U, self.a, U)
        G0 = G0 + self._jump_term(U, self.nu_w, self.nu_y, self.nu_chi)
        if not self.m:
            return G0, np.zeros((U.shape[0], 0), dtype=complex)
        G = np.einsum("nk,ikl,nl->ni", U, self.alpha, U) + U @ self.beta_I
        G = G + V[:, None] * self.delta + (W - 1.0)[:, None] * self.gamma
        for i in range(self.m):
            if len(self.mu_w[i]):
                G[:, i] += self._jump_term(U, self.mu_w[i], self.mu_y[i], self.mu_chi[i])
        return G0, G


def eval_G(params: AffineParams, market: MarketSpec, u, v, w):
    """Evaluate ``G_0(u, v, w)`` and the m-vector ``G(u, v, w)`` at a single point."""
    rhs = RiccatiRHS(params, market)
    G0, G = rhs(np.atleast_2d(np.asarray(u, dtype=complex)), np.atleast_1d(v), np.atleast_1d(w))
    return complex(G0[0]), G[0]
