"""Command-line front end.

Every subcommand reads a model file (``--model``), runs one operation and writes
CSV to ``--out`` (default stdout). The first line of every CSV is a comment
``# model_sha256=<hash> version=<version> seed=<seed or none>`` followed by a
header row. Failures print one line to stderr of the form
``error code=<exit code> type=<error class> [field=value ...] message="<text>"``.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (AdmissibilityError, DampingInfeasibleError, DegenerateHedgeError, ModelFileError,
                     ModelStructureError, MomentExplosionError, QuadratureError)
from .fourier import QuadratureSpec, call_prices, choose_damping, digital_prices, otm_price_sinh
from .hedging import (build_and_solve, sensitivities_approx, sensitivities_call, sensitivities_power,
                      sensitivities_stock)
from .heston import explosion_time, implied_vol_surface
from .model import validate_params
from .modelfile import Model, load, model_hash
from .montecarlo import SimConfig, mc_price, mc_variance_swap, simulate
from .payoff import (PayoffBasis, PricingContext, WeightDensity, approx_price, fit_weights, reference_bases,
                     truncated_log, variance_swap_price)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_MODEL = 3
EXIT_INFEASIBLE = 4
EXIT_DEGENERATE = 5

EPILOG = """exit codes:
  0  success
  1  unexpected internal error
  2  usage error (bad flags or parameter ranges)
  3  model file could not be parsed or is not admissible
  4  infeasible request: exploding moment, infeasible damping or failed quadrature
  5  degenerate hedge system
"""


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------- #
# argument parsing
# --------------------------------------------------------------------------- #

def parse_range(text: str) -> np.ndarray:
    """``a:b:n`` (n equally spaced points), a comma list, or a single number."""
    try:
        if ":" in text:
            a, b, n = text.split(":")
            n = int(n)
            if n < 1:
                raise UsageError(f"range {text!r} needs n >= 1")
            return np.linspace(float(a), float(b), n)
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        if isinstance(exc, UsageError):
            raise
        raise UsageError(f"cannot parse {text!r} as a:b:n or a comma list") from exc


def _piecewise(path: str):
    """Piecewise-linear payoff from a text file of ``s value`` knot pairs (flat outside)."""
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except OSError as exc:
        raise UsageError(f"cannot read payoff knots {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise UsageError(f"malformed payoff knot file {path}: {exc}") from exc
    if data.shape[1] != 2 or data.shape[0] < 2 or np.any(np.diff(data[:, 0]) <= 0):
        raise UsageError("payoff knot file needs two columns with increasing knots")
    s, v = data[:, 0], data[:, 1]
    return lambda x: np.interp(np.asarray(x, dtype=float), s, v)


def parse_payoff(spec: str):
    """Return ``(kind, parameter, phi)`` for ``call:K``, ``put:K``, ``digital:K``,
    ``power:p``, ``truncated-log:k`` or ``piecewise:<file>``."""
    kind, _, arg = spec.partition(":")
    if not arg:
        raise UsageError(f"payoff {spec!r} must look like kind:parameter")
    if kind == "piecewise":
        return kind, arg, _piecewise(arg)
    try:
        val = float(arg)
    except ValueError as exc:
        raise UsageError(f"payoff parameter {arg!r} is not a number") from exc
    if kind == "call":
        return kind, val, lambda s: np.maximum(np.asarray(s, float) - val, 0.0)
    if kind == "put":
        return kind, val, lambda s: np.maximum(val - np.asarray(s, float), 0.0)
    if kind == "digital":
        return kind, val, lambda s: (np.asarray(s, float) > val).astype(float)
    if kind == "power":
        def power(s):
            s = np.asarray(s, float)
            return np.where(s > 0, np.power(np.where(s > 0, s, 1.0), val), 0.0)
        return kind, val, power
    if kind == "truncated-log":
        return kind, val, truncated_log(val)
    raise UsageError(f"unknown payoff kind {kind!r}")


def _positive(name):
    def conv(text):
        v = float(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{name} must be positive")
        return v
    return conv


def _count(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", required=True, help="model file (JSON)")
    common.add_argument("--out", default="-", help="output CSV path (default stdout)")
    common.add_argument("--tol", type=_positive("tol"), default=1e-10, help="Riccati local error tolerance")

    quad = argparse.ArgumentParser(add_help=False)
    quad.add_argument("--quad-points", type=int, default=32, help="Gauss-Legendre nodes per panel")
    quad.add_argument("--y-max", type=_positive("y-max"), default=4096.0, help="Fourier truncation point")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--paths", type=_count, default=100000)
    sim.add_argument("--steps", type=_count, default=500)
    sim.add_argument("--seed", type=int, default=0)

    parser = argparse.ArgumentParser(
        prog="affinepricing", description="Pricing and hedging under affine models with default.",
        epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, parents=()):
        return sub.add_parser(name, help=help_, parents=[common, *parents], epilog=EPILOG,
                              formatter_class=argparse.RawDescriptionHelpFormatter)

    add("validate", "check admissibility; prints OK")

    p = add("moments", "discounted moments h(p) at each maturity")
    p.add_argument("--maturities", required=True)
    p.add_argument("--power", required=True, help="orders p (a:b:n or list)")

    p = add("price", "Fourier call prices", [quad])
    p.add_argument("--strikes", required=True, help="strike levels K (a:b:n or list)")
    p.add_argument("--maturities", required=True)
    p.add_argument("--damping", type=float, help="damping p (default: largest feasible)")
    p.add_argument("--method", choices=("call", "sinh"), default="call",
                   help="'sinh' prices the out-of-the-money option with the symmetric integrand")

    p = add("digitals", "asset-or-nothing, binary and call prices", [quad])
    p.add_argument("--strikes", required=True)
    p.add_argument("--maturities", required=True)
    p.add_argument("--damping", type=float, help="damping p of the asset-or-nothing and call integrals")
    p.add_argument("--binary-damping", type=float, help="damping q of the binary integral (default p)")

    p = add("approx", "fit a payoff in a bond/power/call basis", [quad])
    p.add_argument("--payoff", required=True, help="call:K put:K digital:K power:p truncated-log:k piecewise:FILE")
    p.add_argument("--basis", type=int, choices=(1, 2, 3), help="reference basis (powers, calls, mixed)")
    p.add_argument("--power", help="basis powers (a:b:n or list)")
    p.add_argument("--basis-strikes", help="basis call strikes (a:b:n or list)")
    p.add_argument("--s-star", type=_positive("s-star"), default=3.0)
    p.add_argument("--rho", choices=("peaked", "uniform"), default="peaked")
    p.add_argument("--maturities", help="also price the fitted claim at these maturities")
    p.add_argument("--damping", type=float)

    p = add("vswap", "capped variance swap via the truncated-log replication", [quad, sim])
    p.add_argument("--maturities", required=True)
    p.add_argument("--variance-strike", type=_positive("variance-strike"), required=True)
    p.add_argument("--cap", type=_positive("cap"), help="cap C (default 2.5 K)")
    p.add_argument("--mc", action="store_true", help="add a Monte Carlo estimate")
    p.set_defaults(paths=20000, steps=250)

    p = add("hedge", "hedge ratios matching a target's sensitivities", [quad])
    p.add_argument("--payoff", required=True, help="target payoff spec")
    p.add_argument("--maturities", required=True, help="target maturity")
    p.add_argument("--instruments", required=True, help="JSON list of hedge instruments")
    p.add_argument("--damping", type=float)
    p.add_argument("--basis", type=int, choices=(1, 2, 3), default=2,
                   help="basis used for targets without direct sensitivities")

    p = add("surface", "implied-vol surface (heston-default models)", [quad])
    p.add_argument("--strikes", required=True)
    p.add_argument("--maturities", required=True)
    p.add_argument("--damping", type=float)
    p.add_argument("--no-default", action="store_true", help="set c and gamma to zero")

    p = add("explosion", "moment explosion times t*(p)")
    p.add_argument("--power", required=True, help="orders p (a:b:n or list)")
    p.add_argument("--horizon", type=_positive("horizon"), default=100.0,
                   help="integration horizon for models without closed form")

    p = add("simulate", "Monte Carlo price of a payoff", [sim])
    p.add_argument("--payoff", required=True)
    p.add_argument("--maturities", required=True, help="a single maturity")
    p.add_argument("--root", choices=("factored", "eigh"), default="factored")
    return parser


# --------------------------------------------------------------------------- #
# output
# --------------------------------------------------------------------------- #

def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


class CsvOut:
    def __init__(self, model: Model, seed, header):
        self.lines = [f"# model_sha256={model_hash(model)} version={__version__} "
                      f"seed={'none' if seed is None else seed}"]
        self.header = list(header)
        self.rows = []

    def add(self, *row):
        self.rows.append([_fmt(v) for v in row])

    def write(self, target: str) -> None:
        stream = sys.stdout if target == "-" else open(target, "w", newline="")
        try:
            stream.write(self.lines[0] + "\n")
            w = csv.writer(stream, lineterminator="\n")
            w.writerow(self.header)
            w.writerows(self.rows)
        finally:
            if stream is not sys.stdout:
                stream.close()


# --------------------------------------------------------------------------- #
# subcommands
# --------------------------------------------------------------------------- #

def _quad(args) -> QuadratureSpec:
    try:
        return QuadratureSpec(n_points=args.quad_points, y_max=args.y_max)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _positive_values(name, values):
    if np.any(values <= 0):
        raise UsageError(f"{name} must be positive")
    return values


def _single_maturity(args) -> float:
    ts = _positive_values("maturities", parse_range(args.maturities))
    if ts.size != 1:
        raise UsageError("this subcommand takes a single maturity")
    return float(ts[0])


def cmd_validate(model: Model, args):
    rep = validate_params(model.params, model.market)
    if not rep.ok:
        raise AdmissibilityError(rep.violations)
    print("OK")
    return None


def cmd_moments(model: Model, args):
    oracle = model.oracle(args.tol)
    ts = _positive_values("maturities", parse_range(args.maturities))
    ps = parse_range(args.power)
    out = CsvOut(model, None, ["maturity", "power", "moment", "finite"])
    for t in ts:
        finite = oracle.is_finite(t, ps)
        vals = np.full(ps.size, np.inf)
        if np.any(finite):
            vals[finite] = oracle.moment(t, model.x0, ps[finite]).real
        for p, v, f in zip(ps, vals, finite):
            out.add(t, p, v, int(f))
    return out


def cmd_price(model: Model, args):
    oracle = model.oracle(args.tol)
    quad = _quad(args)
    ts = _positive_values("maturities", parse_range(args.maturities))
    ks = np.log(_positive_values("strikes", parse_range(args.strikes)))
    out = CsvOut(model, None, ["maturity", "log_strike", "price", "damping", "y_max", "tail_estimate"])
    for t in ts:
        if args.method == "sinh":
            p = 0.5 if args.damping is None else args.damping
            prices = otm_price_sinh(oracle, t, model.x0, ks, p, quad)
            for k, v in zip(ks, np.atleast_1d(prices)):
                out.add(t, k, v, p, quad.y_max, float("nan"))
            continue
        if args.damping is not None and not args.damping > 0:
            raise DampingInfeasibleError(f"damping p={args.damping:g} must be positive for call prices",
                                         damping=args.damping)
        res = call_prices(oracle, t, model.x0, ks, args.damping, quad)
        for k, v, tail in zip(ks, res.price, res.tail_estimate):
            out.add(t, k, v, res.damping, res.y_max, tail)
    return out


def cmd_digitals(model: Model, args):
    oracle = model.oracle(args.tol)
    quad = _quad(args)
    ts = _positive_values("maturities", parse_range(args.maturities))
    ks = np.log(_positive_values("strikes", parse_range(args.strikes)))
    out = CsvOut(model, None, ["maturity", "log_strike", "asset_or_nothing", "binary", "call",
                               "damping", "binary_damping"])
    for t in ts:
        p = args.damping if args.damping is not None else choose_damping(oracle, t, model.x0, "digital")
        q = args.binary_damping if args.binary_damping is not None else p
        res = digital_prices(oracle, t, model.x0, ks, p, q, quad)
        for j, k in enumerate(ks):
            out.add(t, k, res.asset_or_nothing[j], res.binary[j], res.call[j], p, q)
    return out


def _basis_from_args(args) -> PayoffBasis:
    if args.basis is not None and (args.power or args.basis_strikes):
        raise UsageError("--basis excludes --power and --basis-strikes")
    if args.basis is not None:
        return reference_bases(args.s_star)[args.basis]
    if not (args.power or args.basis_strikes):
        raise UsageError("give --basis or at least one of --power / --basis-strikes")
    powers = parse_range(args.power) if args.power else np.zeros(0)
    strikes = parse_range(args.basis_strikes) if args.basis_strikes else np.zeros(0)
    try:
        return PayoffBasis(powers=powers, strikes=strikes, s_star=args.s_star)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _fit(phi, basis, rho):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fit_weights(phi, basis, WeightDensity(rho))


def cmd_approx(model: Model, args):
    _, _, phi = parse_payoff(args.payoff)
    fitted = _fit(phi, _basis_from_args(args), args.rho)
    out = CsvOut(model, None, ["leg", "parameter", "value"])
    out.add("bond", 0.0, fitted.phi_zero)
    for p, v in zip(fitted.powers, fitted.power_weights):
        out.add("power", p, v)
    for K, w in zip(fitted.strikes, fitted.strike_weights):
        out.add("call", K, w)
    out.add("residual", float("nan"), fitted.residual)
    out.add("rms", float("nan"), fitted.rms)
    if args.maturities:
        oracle = model.oracle(args.tol)
        quad = _quad(args)
        for t in _positive_values("maturities", parse_range(args.maturities)):
            ctx = PricingContext(oracle, model.x0, t, quad, args.damping)
            out.add("price", t, float(approx_price(fitted, ctx)))
    return out


def cmd_vswap(model: Model, args):
    oracle = model.oracle(args.tol)
    quad = _quad(args)
    K = args.variance_strike
    C = 2.5 * K if args.cap is None else args.cap
    if not C > K:
        raise UsageError("cap must exceed the variance strike")
    header = ["maturity", "variance_strike", "cap", "log_truncation", "price", "corrected_price"]
    if args.mc:
        header += ["mc_estimate", "mc_std_error"]
    out = CsvOut(model, args.seed if args.mc else None, header)
    for t in _positive_values("maturities", parse_range(args.maturities)):
        ctx = PricingContext(oracle, model.x0, t, quad)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            q = variance_swap_price(ctx, K, C=C)
        row = [t, K, C, q.log_truncation, q.price, q.corrected_price]
        if args.mc:
            cfg = SimConfig(args.paths, args.steps, t, seed=args.seed)
            row += list(mc_variance_swap(model.params, model.market, model.x0, K, cfg, C, tol=args.tol))
        out.add(*row)
    return out


def _load_instruments(path: str) -> list[dict]:
    try:
        items = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read instrument list {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"malformed instrument list: {exc.msg} at line {exc.lineno}") from exc
    if not isinstance(items, list) or not all(isinstance(i, dict) for i in items):
        raise UsageError("instrument list must be a JSON array of objects")
    return items


def _instrument(model: Model, oracle, spec: dict, quad, damping):
    keys = {"stock": set(), "government-bond": {"maturity"}, "corporate-bond": {"maturity"},
            "call": {"strike", "maturity"}, "power": {"p", "maturity"}}
    kind = spec.get("type")
    if kind not in keys:
        raise UsageError(f"unknown instrument type {kind!r}")
    if set(spec) - {"type"} != keys[kind]:
        raise UsageError(f"instrument {kind!r} takes exactly: {', '.join(sorted(keys[kind])) or 'no fields'}")
    par, mk, x = model.params, model.market, model.x0
    if kind == "stock":
        return "stock", sensitivities_stock(par, mk, x)
    t = float(spec["maturity"])
    if not t > 0:
        raise UsageError("instrument maturity must be positive")
    if kind == "government-bond":
        return f"government-bond:{t:g}", sensitivities_power(par, mk, x, t, 0.0, oracle, government=True)
    if kind == "corporate-bond":
        return f"corporate-bond:{t:g}", sensitivities_power(par, mk, x, t, 0.0, oracle)
    if kind == "power":
        p = float(spec["p"])
        return f"power:{p:g}:{t:g}", sensitivities_power(par, mk, x, t, p, oracle)
    K = float(spec["strike"])
    if not K > 0:
        raise UsageError("instrument strike must be positive")
    return f"call:{K:g}:{t:g}", sensitivities_call(par, mk, x, t, np.log(K), damping, oracle, quad)


def _target(model: Model, oracle, args, t, quad):
    kind, val, phi = parse_payoff(args.payoff)
    par, mk, x = model.params, model.market, model.x0
    if kind == "call":
        return sensitivities_call(par, mk, x, t, np.log(val), args.damping, oracle, quad)
    if kind == "power":
        return sensitivities_power(par, mk, x, t, val, oracle)
    if kind == "put":
        # (K - s)^+ = (s - K)^+ - s + K, which also holds at s = 0 after default
        call = sensitivities_call(par, mk, x, t, np.log(val), args.damping, oracle, quad)
        return call - sensitivities_power(par, mk, x, t, 1.0, oracle) \
            + val * sensitivities_power(par, mk, x, t, 0.0, oracle, government=True)
    basis = _fit(phi, reference_bases()[args.basis], "peaked")
    return sensitivities_approx(basis, PricingContext(oracle, x, t, quad, args.damping))


def cmd_hedge(model: Model, args):
    oracle = model.oracle(args.tol)
    quad = _quad(args)
    t = _single_maturity(args)
    specs = _load_instruments(args.instruments)
    target = _target(model, oracle, args, t, quad)
    named = [_instrument(model, oracle, s, quad, args.damping) for s in specs]
    if len(named) != target.L:
        raise UsageError(f"the model needs exactly {target.L} instruments, got {len(named)}")
    system = build_and_solve(target, [s for _, s in named])
    out = CsvOut(model, None, ["quantity", "value"])
    for (name, _), th in zip(named, system.theta):
        out.add(f"theta:{name}", th)
    out.add("condition_estimate", system.condition_estimate)
    out.add("residual", system.residual)
    return out


def cmd_surface(model: Model, args):
    if model.heston is None:
        raise UsageError("surface needs a heston-default model")
    hp = model.heston.without_default() if args.no_default else model.heston
    strikes = _positive_values("strikes", parse_range(args.strikes))
    ts = _positive_values("maturities", parse_range(args.maturities))
    surf = implied_vol_surface(hp, strikes, ts, _quad(args), args.damping)
    for msg in surf.diagnostics:
        print(f"warning: {msg}", file=sys.stderr)
    out = CsvOut(model, None, ["strike", "maturity", "price", "implied_vol", "bond_yield"])
    for row in surf.rows():
        out.add(*row)
    return out


def cmd_explosion(model: Model, args):
    ps = parse_range(args.power)
    if model.heston is not None:
        t_star = np.atleast_1d(explosion_time(model.heston, ps))
    else:
        t_star = model.oracle(args.tol).explosion_times(args.horizon, ps)
    out = CsvOut(model, None, ["p", "t_star"])
    for p, ts in zip(ps, t_star):
        out.add(p, ts)
    return out


def cmd_simulate(model: Model, args):
    _, _, phi = parse_payoff(args.payoff)
    t = _single_maturity(args)
    cfg = SimConfig(args.paths, args.steps, t, seed=args.seed, root=args.root)
    smp = simulate(model.params, model.market, model.x0, cfg)
    if smp.clipped:
        print(f"warning: clipped {smp.clipped} negative covariance eigenvalue(s)", file=sys.stderr)
    est, se = mc_price(smp, phi)
    out = CsvOut(model, args.seed, ["estimate", "std_error", "n_paths", "dt", "seed"])
    out.add(est, se, cfg.n_paths, cfg.dt, cfg.seed)
    return out


COMMANDS = {
    "validate": cmd_validate, "moments": cmd_moments, "price": cmd_price, "digitals": cmd_digitals,
    "approx": cmd_approx, "vswap": cmd_vswap, "hedge": cmd_hedge, "surface": cmd_surface,
    "explosion": cmd_explosion, "simulate": cmd_simulate,
}


# --------------------------------------------------------------------------- #
# entry point
# --------------------------------------------------------------------------- #

def _error_line(code: int, exc: BaseException) -> str:
    fields = [f"code={code}", f"type={type(exc).__name__}"]
    for attr in ("damping", "explosion_time", "rank", "determinant"):
        val = getattr(exc, attr, None)
        if val is not None:
            fields.append(f"{attr}={_fmt(val)}")
    fields.append(f"message={json.dumps(str(exc))}")
    return "error " + " ".join(fields)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (ModelFileError, ModelStructureError, AdmissibilityError)):
        return EXIT_MODEL
    if isinstance(exc, (MomentExplosionError, QuadratureError)):
        return EXIT_INFEASIBLE
    if isinstance(exc, DegenerateHedgeError):
        return EXIT_DEGENERATE
    return EXIT_UNEXPECTED


def _attach_negative_values(argv: list[str]) -> list[str]:
    """Rewrite ``--flag -1:3:5`` as ``--flag=-1:3:5`` so negative ranges are not read as options."""
    out: list[str] = []
    for tok in argv:
        if (out and out[-1].startswith("--") and "=" not in out[-1] and len(tok) > 1
                and tok[0] == "-" and (tok[1].isdigit() or tok[1] == ".")):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_attach_negative_values(argv))
    try:
        model = load(args.model)
        out = COMMANDS[args.command](model, args)
        if out is not None:
            out.write(args.out)
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - every failure becomes one parsable line
        code = _exit_code(exc)
        print(_error_line(code, exc), file=sys.stderr)
        return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
