"""Sensitivity vectors of European claims and the replication system.

A claim's sensitivity vector stacks its state Greeks ``H``, its value changes
under each possible jump of the state (``J``) and its value change at default
(``D``). Matching the target's vector with a portfolio of ``L`` instruments is a
square linear system.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from .errors import DegenerateHedgeError, ModelStructureError
from .fourier import call_prices
from .model import AffineParams, MarketSpec
from .moments import AffineMoments, MomentOracle
from .payoff import PayoffBasis, PricingContext

PIVOT_RATIO_TOL = 1e-13


@dataclass
class SensitivityVector:
    """``(H, J_nu, J_mu, D)``; all fields may carry a common leading batch axis."""

    H: np.ndarray
    J_nu: np.ndarray
    J_mu: list
    D: np.ndarray | float
    value: np.ndarray | float | None = field(default=None, compare=False)

    def as_array(self) -> np.ndarray:
        D = np.asarray(self.D, dtype=float)[..., None]
        parts = [np.asarray(self.H, float), np.asarray(self.J_nu, float)]
        parts += [np.asarray(j, float) for j in self.J_mu]
        return np.concatenate(parts + [D], axis=-1)

    @property
    def L(self) -> int:
        return self.as_array().shape[-1]

    def _like(self, arr: np.ndarray, value) -> "SensitivityVector":
        n, M = np.shape(self.H)[-1], np.shape(self.J_nu)[-1]
        sizes = [np.shape(j)[-1] for j in self.J_mu]
        cuts = np.cumsum([n, M] + sizes)
        pieces = np.split(arr, cuts, axis=-1)
        return SensitivityVector(pieces[0], pieces[1], pieces[2:-1], pieces[-1][..., 0], value)

    def __add__(self, other: "SensitivityVector") -> "SensitivityVector":
        value = None if self.value is None or other.value is None else self.value + other.value
        return self._like(self.as_array() + other.as_array(), value)

    def __sub__(self, other: "SensitivityVector") -> "SensitivityVector":
        value = None if self.value is None or other.value is None else self.value - other.value
        return self._like(self.as_array() - other.as_array(), value)

    def __mul__(self, scalar) -> "SensitivityVector":
        value = None if self.value is None else scalar * self.value
        return self._like(scalar * self.as_array(), value)

    __rmul__ = __mul__


def zero_sensitivities(params: AffineParams, batch: tuple = ()) -> SensitivityVector:
    M, Mi = params.n_jump_types
    return SensitivityVector(np.zeros(batch + (params.n,)), np.zeros(batch + (M,)),
                             [np.zeros(batch + (k,)) for k in Mi], np.zeros(batch), np.zeros(batch))


def _jump_states(params: AffineParams, X: np.ndarray) -> np.ndarray:
    """States after each possible jump: shape ``(P, 1 + M + sum M_i, n)`` (index 0 is no jump)."""
    pts = [np.zeros((1, params.n)), params.nu_points] + list(params.mu_points)
    Y = np.concatenate([p.reshape(-1, params.n) for p in pts], axis=0)
    out = X[:, None, :] + Y[None, :, :]
    if params.m and np.any(out[..., :params.m] < -1e-12):
        raise ModelStructureError("jump-shifted state leaves the state space")
    return out


def _from_values(params: AffineParams, values: np.ndarray, H: np.ndarray, D: np.ndarray,
                 single: bool) -> SensitivityVector:
    """Assemble from values at jump-shifted states (axis 1, index 0 = current state)."""
    M, Mi = params.n_jump_types
    J = values[:, 1:] - values[:, :1]
    J_nu = J[:, :M]
    J_mu, start = [], M
    for k in Mi:
        J_mu.append(J[:, start:start + k])
        start += k
    sv = SensitivityVector(H, J_nu, J_mu, D, values[:, 0])
    if single:
        sv = SensitivityVector(sv.H[0], sv.J_nu[0], [j[0] for j in sv.J_mu], float(sv.D[0]),
                               float(sv.value[0]))
    return sv


def _oracle(params, market, oracle):
    return oracle if oracle is not None else AffineMoments(params, market)


def sensitivities_power(params: AffineParams, market: MarketSpec, x, t: float, p: float,
                        oracle: MomentOracle | None = None, government: bool = False) -> SensitivityVector:
    """Sensitivities of ``S_t^p 1{S_t > 0}``; ``government`` gives the default-free bond (``p = 0``).

    ``H_q = B_q h(p)``, ``J = h(p; x + y) - h(p; x)``, ``D = -h(p)`` (0 for the
    government bond). ``x`` may be a batch ``(P, n)``.
    """
    oracle = _oracle(params, market, oracle)
    if government:
        if p != 0:
            raise ValueError("government bond corresponds to p = 0")
        oracle = oracle.government()
    a0, B, finite = oracle.coefficients(t, [p])
    if not finite[0]:
        from .errors import MomentExplosionError
        raise MomentExplosionError(f"power p={p:g} infeasible at t={t:g}", z=p)
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    XS = _jump_states(params, X)
    values = np.exp(a0[0] + XS @ B[0]).real
    H = values[:, :1] * B[0].real[None, :]
    D = np.zeros(X.shape[0]) if government else -values[:, 0]
    return _from_values(params, values, H, D, x.ndim == 1)


def sensitivities_stock(params: AffineParams, market: MarketSpec, x) -> SensitivityVector:
    """Pre-default stock ``S = exp(e + <eps, x>)`` (rate and intensity integrals absorbed in ``e``)."""
    market = market.resolved(params.m)
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    XS = _jump_states(params, X)
    values = np.exp(market.e + XS @ market.epsilon)
    H = values[:, :1] * market.epsilon[None, :]
    return _from_values(params, values, H, -values[:, 0], x.ndim == 1)


def sensitivities_call(params: AffineParams, market: MarketSpec, x, t: float, k: float,
                       p_damp: float | None = None, oracle: MomentOracle | None = None,
                       quad=None) -> SensitivityVector:
    """Sensitivities of a call with log-strike ``k``.

    ``H`` integrates the state derivative of the Fourier integrand; jump
    sensitivities re-price at shifted states from the same moment samples; ``D = -c``.
    """
    oracle = _oracle(params, market, oracle)
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    XS = _jump_states(params, X)
    P, Q, n = XS.shape
    flat = XS.reshape(P * Q, n)
    res = call_prices(oracle, t, flat, [k], p_damp, quad, greeks=True)
    values = res.price[:, 0].reshape(P, Q)
    H = res.delta[:, 0, :].reshape(P, Q, n)[:, 0, :]
    return _from_values(params, values, H, -values[:, 0], x.ndim == 1)


def sensitivities_approx(basis: PayoffBasis, ctx: PricingContext) -> SensitivityVector:
    """Fitted-weight combination of bond, power and call sensitivities."""
    if not basis.fitted:
        raise ValueError("basis has not been fitted")
    oracle = ctx.oracle
    params, market = oracle.params, oracle.market
    batch = np.shape(ctx.x)[:-1]
    out = zero_sensitivities(params, batch)
    if basis.phi_zero != 0.0:
        out = out + basis.phi_zero * sensitivities_power(params, market, ctx.x, ctx.t, 0.0, oracle,
                                                         government=True)
    for p, v in zip(basis.powers, basis.power_weights):
        if v != 0.0:
            out = out + v * sensitivities_power(params, market, ctx.x, ctx.t, p, oracle)
    if basis.strikes.size:
        damping = ctx.call_damping()
        for K, w in zip(basis.strikes, basis.strike_weights):
            if w != 0.0:
                out = out + w * sensitivities_call(params, market, ctx.x, ctx.t, np.log(K), damping,
                                                   oracle, ctx.quad)
    return out


@dataclass
class HedgeSystem:
    """``matrix @ theta = rhs`` with instrument sensitivity vectors as columns."""

    matrix: np.ndarray
    rhs: np.ndarray
    theta: np.ndarray | None = None
    condition_estimate: float = np.nan
    residual: float = np.nan


def build_and_solve(target: SensitivityVector, instruments: list[SensitivityVector]) -> HedgeSystem:
    """Solve for instrument holdings matching the target's sensitivity vector.

    LU with partial pivoting and one step of iterative refinement. Raises
    :class:`DegenerateHedgeError` if the smallest pivot is below ``1e-13`` of the
    largest.
    """
    rhs = np.asarray(target.as_array(), dtype=float)
    if rhs.ndim != 1:
        raise ValueError("build_and_solve expects unbatched sensitivity vectors")
    L = rhs.size
    if len(instruments) != L:
        raise ValueError(f"need exactly L={L} instruments, got {len(instruments)}")
    A = np.column_stack([np.asarray(s.as_array(), dtype=float) for s in instruments])
    system = HedgeSystem(A, rhs)
    # singularity is reported below as DegenerateHedgeError, not as a scipy warning
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", LinAlgWarning)
        lu, piv = lu_factor(A, check_finite=True)
    diag = np.abs(np.diag(lu))
    top = diag.max() if diag.size else 0.0
    rank = int(np.sum(diag > PIVOT_RATIO_TOL * top)) if top > 0 else 0
    det = float(np.prod(np.diag(lu)) * (-1) ** np.sum(piv != np.arange(L)))
    if top == 0.0 or diag.min() < PIVOT_RATIO_TOL * top:
        raise DegenerateHedgeError(f"degenerate hedge family: rank {rank} < {L}, determinant {det:.3e}",
                                   rank=rank, determinant=det)
    theta = lu_solve((lu, piv), rhs)
    theta = theta + lu_solve((lu, piv), rhs - A @ theta)
    system.theta = theta
    system.condition_estimate = float(np.linalg.cond(A))
    system.residual = float(np.max(np.abs(A @ theta - rhs)))
    bound = 1e-8 * (1.0 + np.max(np.abs(rhs)))
    if system.residual > bound:
        raise DegenerateHedgeError(f"hedge residual {system.residual:.3e} exceeds {bound:.3e}",
                                   rank=rank, determinant=det)
    return system


def solve_batch(targets: np.ndarray, matrices: np.ndarray) -> np.ndarray:
    """Vectorized solve of many small hedge systems ``matrices[p] @ theta[p] = targets[p]``."""
    return np.linalg.solve(matrices, targets[..., None])[..., 0]
