"""Pricing and hedging of equity, bond and credit claims under affine models with default."""

__version__ = "0.1.0"

from .errors import (AdmissibilityError, AffinePricingError, DampingInfeasibleError, DegenerateHedgeError,
                     ModelFileError, ModelStructureError, MomentExplosionError, QuadratureError)
from .fourier import (DigitalPrices, FourierPrice, QuadratureSpec, call_price, call_prices, choose_damping,
                      digital_prices, otm_price_sinh)
from .hedging import (HedgeSystem, SensitivityVector, build_and_solve, sensitivities_approx,
                      sensitivities_call, sensitivities_power, sensitivities_stock)
from .heston import (EXPLOSION_PARAMS, SURFACE_PARAMS, HestonDefaultParams, HestonMoments, explosion_time,
                     implied_vol, implied_vol_surface, riccati_closed_form, simulate_hedge, to_affine)
from .model import AffineParams, MarketSpec, ValidationReport, eval_G, validate_params
from .modelfile import Model, dump, dumps, load, loads, model_hash
from .moments import (AffineMoments, MomentOracle, bond_price, check_martingale, discounted_moment,
                      futures_price, probe_domain)
from .montecarlo import PathSample, SimConfig, mc_price, mc_variance_swap, simulate
from .payoff import (PayoffBasis, PricingContext, WeightDensity, approx_price, fit_weights, gram_schmidt,
                     reference_bases, truncated_log, variance_swap_price, weighted_error)
from .riccati import RiccatiSolution, solve_riccati, solve_riccati_batch

__all__ = [name for name in dir() if not name.startswith("_")]
