"""Generalized Riccati system for the discounted transform.

For fixed ``(u, v, w)`` the pair ``(A, B)`` solves::

    dA/dt   = G_0(B, v, w),      A(0)   = 0
    dB_I/dt = G(B, v, w),        B_I(0) = u_I
    B_J(t)  = expm(beta_JJ^T t) u_J

``B_J`` is evaluated in closed form. ``(A, B_I)`` is integrated with the
Dormand-Prince 5(4) pair using a step size shared by a whole batch of
``(u, v, w)`` rows; rows that blow up are retired individually so the rest of
the batch is unaffected.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .model import AffineParams, MarketSpec, RiccatiRHS

EXPLOSION_THRESHOLD = 1e8
MIN_STEP_FRACTION = 1e-12
DEFAULT_TOL = 1e-10

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension, y(t + s h) = y + h * sum_j (K^T P)_j s^(j+1)
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


def _real_abs(y: np.ndarray) -> np.ndarray:
    """Absolute values of the real and imaginary parts side by side, shape (N, 2k)."""
    return np.abs(np.ascontiguousarray(y).view(float))


@dataclass
class _Trajectory:
    t: list = field(default_factory=list)
    h: list = field(default_factory=list)
    y: list = field(default_factory=list)
    Q: list = field(default_factory=list)


def integrate_batch(f, y0, t_end, tol=DEFAULT_TOL, t_eval=None, record=False,
                    threshold=EXPLOSION_THRESHOLD, min_step_fraction=MIN_STEP_FRACTION):
    """Integrate ``y' = f(t, y, rows)`` for a batch of complex states.

    Parameters
    ----------
    f : callable
        ``f(t, y, rows)`` returns the derivative for the active ``rows`` (an index
        array into the original batch); ``y`` has shape ``(len(rows), k)``.
    y0 : (N, k) complex array
    t_end : float
    t_eval : increasing times in ``[0, t_end]`` at which to report the solution.

    Returns
    -------
    values : (len(t_eval), N, k) complex array, ``inf`` after a row's explosion
    explosion_time : (N,) array, ``inf`` for rows that stayed finite
    trajectory : per-step record of the full batch when ``record`` is set
    """
    y = np.array(y0, dtype=complex)
    N, k = y.shape
    t_eval = np.asarray([t_end] if t_eval is None else t_eval, dtype=float)
    values = np.full((t_eval.size, N, k), np.inf, dtype=complex)
    explosion = np.full(N, np.inf)
    rows = np.arange(N)
    traj = _Trajectory() if record else None

    next_out = 0
    while next_out < t_eval.size and t_eval[next_out] <= 0.0:
        values[next_out] = y
        next_out += 1
    if t_end <= 0.0:
        return values, explosion, traj
    if record:
        traj.t.append(0.0)
        traj.y.append(y.copy())

    hmin = min_step_fraction * t_end
    K1 = f(0.0, y, rows)

    # initial step (Hairer, Norsett & Wanner)
    scale = tol * (1.0 + _real_abs(y))
    d0 = np.sqrt(np.mean((_real_abs(y) / scale) ** 2))
    d1 = np.sqrt(np.mean((_real_abs(K1) / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5 or not np.isfinite(d1)) else 0.01 * d0 / d1
    h0 = min(h0, t_end)
    y1 = y + h0 * K1
    f1 = f(h0, y1, rows)
    d2 = np.sqrt(np.mean((_real_abs(f1 - K1) / scale) ** 2)) / h0
    if not np.isfinite(d2):
        h = h0
    elif max(d1, d2) <= 1e-15:
        h = max(1e-6, h0 * 1e-3)
    else:
        h = (0.01 / max(d1, d2)) ** 0.2
    h = min(100 * h0, h, t_end)

    t = 0.0
    Ks = np.empty((7,) + y.shape, dtype=complex)
    with np.errstate(over="ignore", invalid="ignore"):
        while t < t_end and rows.size:
            h = min(h, t_end - t)
            last = (t + h >= t_end) or (t_end - (t + h) < hmin)
            if last:
                h = t_end - t
            Ks = np.empty((7,) + y.shape, dtype=complex)
            Ks[0] = K1
            for s in range(1, 6):
                ys = y + h * np.tensordot(_A[s], Ks[:s], axes=1)
                Ks[s] = f(t + _C[s] * h, ys, rows)
            y_new = y + h * np.tensordot(_B5[:6], Ks[:6], axes=1)
            Ks[6] = f(t + h, y_new, rows)
            err = h * np.tensordot(_E, Ks, axes=1)
            scale = tol * (1.0 + np.maximum(_real_abs(y), _real_abs(y_new)))
            err_rows = np.max(_real_abs(err) / scale, axis=1)
            bad = ~np.all(np.isfinite(y_new), axis=1) | ~np.isfinite(err_rows)
            err_rows[bad] = np.inf
            err_max = float(np.max(err_rows))

            if err_max <= 1.0:
                t_new = t_end if last else t + h
                if next_out < t_eval.size and t_eval[next_out] <= t_new:
                    Q = np.tensordot(_P.T, Ks, axes=1)  # (4, N, k)
                    while next_out < t_eval.size and t_eval[next_out] <= t_new:
                        sigma = (t_eval[next_out] - t) / h
                        powers = sigma ** np.arange(1, 5)
                        values[next_out, rows] = y + h * np.tensordot(powers, Q, axes=1)
                        next_out += 1
                if record:
                    full = np.full((N, k), np.inf, dtype=complex)
                    full[rows] = y_new
                    traj.t.append(t_new)
                    traj.h.append(h)
                    traj.y.append(full)
                    Qf = np.full((4, N, k), np.inf, dtype=complex)
                    Qf[:, rows] = np.tensordot(_P.T, Ks, axes=1)
                    traj.Q.append(Qf)
                t, y, K1 = t_new, y_new, Ks[6]
                blown = np.max(np.abs(y), axis=1) > threshold
                if blown.any():
                    explosion[rows[blown]] = t
                    keep = ~blown
                    rows, y, K1 = rows[keep], y[keep], K1[keep]
                fac = 5.0 if err_max == 0.0 else min(5.0, max(0.2, 0.9 * err_max ** -0.2))
                h = h * fac
            else:
                h_new = h * max(0.2, 0.9 * err_max ** -0.2) if np.isfinite(err_max) else 0.2 * h
                if h_new < hmin:
                    failed = err_rows > 1.0
                    explosion[rows[failed]] = t
                    keep = ~failed
                    rows, y, K1 = rows[keep], y[keep], K1[keep]
                else:
                    h = h_new
    return values, explosion, traj


class RiccatiSystem:
    """Riccati right-hand side for given (u, v, w) rows, with ``B_J`` in closed form."""

    def __init__(self, params: AffineParams, market: MarketSpec):
        self.params = params
        self.market = market
        self.rhs = RiccatiRHS(params, market)
        self.n, self.m = params.n, params.m
        bjj = params.beta[params.m:, params.m:]
        self._bjj_t = bjj.T.copy()
        self._bjj_zero = not np.any(bjj)

    def expm_JJ(self, t: float) -> np.ndarray:
        if self._bjj_zero:
            return np.eye(self.n - self.m)
        return expm(self._bjj_t * t)

    def B_J(self, t: float, UJ: np.ndarray) -> np.ndarray:
        if self._bjj_zero or UJ.shape[1] == 0:
            return UJ.astype(complex, copy=True)
        return UJ @ self.expm_JJ(t).T

    def solve(self, U, V, W, t_end, tol=DEFAULT_TOL, t_eval=None, record=False):
        U = np.atleast_2d(np.asarray(U, dtype=complex))
        V = np.broadcast_to(np.asarray(V, dtype=complex), U.shape[:1])
        W = np.broadcast_to(np.asarray(W, dtype=complex), U.shape[:1])
        m = self.m
        UJ = U[:, m:]
        rhs = self.rhs

        def f(t, y, rows):
            B = np.concatenate([y[:, 1:], self.B_J(t, UJ[rows])], axis=1)
            G0, G = rhs(B, V[rows], W[rows])
            return np.concatenate([G0[:, None], G], axis=1)

        y0 = np.concatenate([np.zeros((U.shape[0], 1), dtype=complex), U[:, :m]], axis=1)
        return integrate_batch(f, y0, float(t_end), tol=tol, t_eval=t_eval, record=record)


@dataclass
class RiccatiBatch:
    """Values of ``(A, B)`` at ``t_eval`` for a batch of rows."""

    t_eval: np.ndarray
    A: np.ndarray  # (T, N)
    B: np.ndarray  # (T, N, n)
    explosion_time: np.ndarray  # (N,)

    @property
    def exploded(self) -> np.ndarray:
        return np.isfinite(self.explosion_time)


def solve_riccati_batch(params, market, U, V, W, t_end, tol=DEFAULT_TOL, t_eval=None,
                        system: RiccatiSystem | None = None) -> RiccatiBatch:
    """Solve the Riccati system for many ``(u, v, w)`` rows at once."""
    system = system or RiccatiSystem(params, market)
    U = np.atleast_2d(np.asarray(U, dtype=complex))
    t_eval = np.asarray([t_end] if t_eval is None else t_eval, dtype=float)
    vals, expl, _ = system.solve(U, V, W, t_end, tol=tol, t_eval=t_eval)
    m = params.m
    T, N = t_eval.size, U.shape[0]
    A = vals[:, :, 0]
    B = np.empty((T, N, params.n), dtype=complex)
    B[:, :, :m] = vals[:, :, 1:]
    for j, te in enumerate(t_eval):
        B[j, :, m:] = system.B_J(te, U[:, m:])
        dead = expl <= te
        B[j, dead, :] = np.inf
        A[j, dead] = np.inf
    return RiccatiBatch(t_eval, A, B, expl)


@dataclass
class RiccatiSolution:
    """Solution of the Riccati system for one ``(u, v, w)`` on the adaptive grid."""

    t_grid: np.ndarray
    A: np.ndarray
    B: np.ndarray
    exploded: bool
    explosion_time: float | None
    _system: RiccatiSystem = field(repr=False, default=None)
    _u: np.ndarray = field(repr=False, default=None)
    _steps: _Trajectory = field(repr=False, default=None)

    def at(self, t: float) -> tuple[complex, np.ndarray]:
        """Dense-output evaluation of ``(A(t), B(t))``; infinite after explosion."""
        t = float(t)
        n, m = self._system.n, self._system.m
        if t < 0 or t > self.t_grid[-1] * (1 + 1e-14) + 1e-300:
            if not (self.exploded and t >= self.explosion_time):
                raise ValueError(f"t={t} outside the solved range [0, {self.t_grid[-1]}]")
        if self.exploded and t >= self.explosion_time:
            return complex(np.inf), np.full(n, np.inf, dtype=complex)
        j = int(np.searchsorted(self.t_grid, t, side="right")) - 1
        j = min(max(j, 0), len(self.t_grid) - 1)
        if self.t_grid[j] == t or j == len(self.t_grid) - 1:
            y = self._steps.y[j][0]
        else:
            h = self._steps.h[j]
            sigma = (t - self.t_grid[j]) / h
            Q = self._steps.Q[j][:, 0]
            y = self._steps.y[j][0] + h * (sigma ** np.arange(1, 5)) @ Q
        B = np.empty(n, dtype=complex)
        B[:m] = y[1:]
        B[m:] = self._system.B_J(t, self._u[None, m:])[0]
        return complex(y[0]), B


def solve_riccati(params: AffineParams, market: MarketSpec, u, v, w, t_end: float,
                  tol: float = DEFAULT_TOL) -> RiccatiSolution:
    """Integrate the Riccati system for a single ``(u, v, w)`` up to ``t_end``.

    On explosion the returned solution has ``exploded`` set and ``explosion_time``
    equal to the first grid time at which ``max(|A|, |B_i|)`` exceeded the
    threshold (or the step size collapsed); grid values from that time on are
    ``inf``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    system = RiccatiSystem(params, market)
    u = np.asarray(u, dtype=complex).ravel()
    vals, expl, traj = system.solve(u[None, :], np.array([v]), np.array([w]), t_end, tol=tol, record=True)
    n, m = params.n, params.m
    if traj is None:  # t_end == 0
        grid = np.array([0.0])
        A = np.zeros(1, dtype=complex)
        B = u[None, :].copy()
        traj = _Trajectory(t=[0.0], y=[np.concatenate([[0.0], u[:m]])[None, :]])
    else:
        grid = np.asarray(traj.t)
        Y = np.array([y[0] for y in traj.y])
        A = Y[:, 0]
        B = np.empty((grid.size, n), dtype=complex)
        B[:, :m] = Y[:, 1:]
        for j, tj in enumerate(grid):
            B[j, m:] = system.B_J(tj, u[None, m:])[0]
    exploded = bool(np.isfinite(expl[0]))
    t_star = float(expl[0]) if exploded else None
    if exploded:
        dead = grid >= t_star
        A = A.copy()
        A[dead] = np.inf
        B[dead] = np.inf
        if grid[-1] < t_star:
            grid = np.append(grid, t_star)
            A = np.append(A, np.inf)
            B = np.vstack([B, np.full((1, n), np.inf)])
    return RiccatiSolution(grid, A, B, exploded, t_star, system, u, traj)
