"""Small models shared by the test modules."""

from __future__ import annotations

import numpy as np

from affinepricing import AffineParams, MarketSpec, eval_G
from affinepricing.heston import SURFACE_PARAMS, to_affine


def cir(kappa=0.5, theta=0.04, sigma=0.3, x0=0.05):
    """Short rate r = x following a CIR process; no default, stock irrelevant (eps = 0)."""
    params = AffineParams(n=1, m=1, a=[[0.0]], alpha=[[[0.5 * sigma ** 2]]], b=[kappa * theta],
                          beta=[[-kappa]])
    market = MarketSpec(e=0.0, epsilon=[0.0], d=0.0, delta=[1.0], c=0.0, gamma=[0.0])
    return params, market, np.array([x0])


def merton(sigma=0.2, d=0.03, c=0.02, jumps=((0.4, -0.15), (0.3, 0.1)), s0=1.0):
    """One-factor log price with Gaussian diffusion and discrete jumps, martingale drift."""
    a = 0.5 * sigma ** 2
    nu = [{"weight": w, "point": [y]} for w, y in jumps]
    comp = sum(w * (np.expm1(y) - np.sign(y) * min(1.0, abs(y))) for w, y in jumps)
    params = AffineParams(n=1, m=0, a=[[a]], alpha=[], b=[-a - comp], beta=[[0.0]], nu=nu)
    market = MarketSpec(e=0.0, epsilon=[1.0], d=d, c=c)
    return params, market, np.array([np.log(s0)])


def deterministic(d=0.03, s0=1.2, c=0.0):
    """No noise at all: S_t = S0 exp((d + c) t) before default."""
    params = AffineParams(n=1, m=0, a=[[0.0]], alpha=[], b=[0.0], beta=[[0.0]])
    market = MarketSpec(e=float(np.log(s0)), epsilon=[0.0], d=d, c=c)
    return params, market, np.array([0.0])


def pure_drift():
    """a = alpha = 0, no jumps, two nonnegative factors and one real factor."""
    beta = np.array([[-0.7, 0.2, 0.0],
                     [0.1, -0.4, 0.0],
                     [0.3, -0.2, -0.5]])
    params = AffineParams(n=3, m=2, a=np.zeros((3, 3)), alpha=np.zeros((2, 3, 3)), b=[0.05, 0.02, 0.1],
                          beta=beta)
    market = MarketSpec(e=0.1, epsilon=[0.2, -0.1, 0.5], d=0.01, delta=[0.1, 0.05], c=0.02,
                        gamma=[0.03, 0.0])
    return params, market, np.array([0.3, 0.2, -0.1])


def jump_model():
    """Variance factor with state-dependent co-jumps plus constant-rate log-price jumps.

    The log-price drift (b_J, beta_J1) is solved so that the discounted stock is a
    martingale.
    """
    eta, rho, kappa, theta = 0.3, -0.5, 1.5, 0.04
    alpha1 = 0.5 * np.array([[eta ** 2, rho * eta], [rho * eta, 1.0]])
    a = np.diag([0.0, 0.5 * 0.01])
    nu = [{"weight": 0.3, "point": [0.0, -0.1]}, {"weight": 0.5, "point": [0.0, 0.05]}]
    mu = [[{"weight": 2.0, "point": [0.02, -0.05]}]]
    market = MarketSpec(e=0.0, epsilon=[0.0, 1.0], d=0.01, delta=[0.05], c=0.01, gamma=[0.1])

    def build(bJ, betaJ1):
        return AffineParams(n=2, m=1, a=a, alpha=[alpha1], b=[kappa * theta, bJ],
                            beta=[[-kappa, 0.0], [betaJ1, 0.0]], nu=nu, mu=mu)

    G0, G = eval_G(build(0.0, 0.0), market, market.epsilon, 0.0, 1.0)
    params = build(-G0.real, -G[0].real)
    return params, market, np.array([0.04, 0.0])


def heston():
    params, market = to_affine(SURFACE_PARAMS)
    return params, market, np.asarray(SURFACE_PARAMS.x0)
