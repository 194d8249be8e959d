"""Reading and writing model files.

A model file is a JSON object. Two kinds are accepted:

``"kind": "affine"``
    Generic generator data: ``n``, ``m``, ``a`` (n x n), ``alpha`` (m matrices
    n x n), ``b`` (n), ``beta`` (n x n), ``nu`` (list of ``{"weight", "point"}``),
    ``mu`` (m such lists), market loadings ``e``, ``epsilon`` (n), ``d``,
    ``delta`` (m), ``c``, ``gamma`` (m) and the initial state ``x0`` (n).
    ``nu``, ``mu``, ``d``, ``delta``, ``c`` and ``gamma`` are optional.

``"kind": "heston-default"``
    The two-factor stochastic volatility model with default: ``kappa1``,
    ``kappa2``, ``theta1``, ``theta2``, ``eta1``, ``eta2``, ``rho`` and optional
    ``c``, ``gamma1``, ``gamma2``, ``d``, ``delta1``, ``delta2``, ``x0``
    (``[V1, V2, log S0]``).

Unknown keys are rejected. :func:`dumps` writes the canonical form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AffinePricingError, ModelFileError
from .heston import HestonDefaultParams, HestonMoments, to_affine
from .model import AffineParams, MarketSpec
from .moments import AffineMoments, MomentOracle

AFFINE_REQUIRED = ("n", "m", "a", "alpha", "b", "beta", "e", "epsilon", "x0")
AFFINE_OPTIONAL = ("nu", "mu", "d", "delta", "c", "gamma")
HESTON_REQUIRED = ("kappa1", "kappa2", "theta1", "theta2", "eta1", "eta2", "rho")
HESTON_OPTIONAL = ("c", "gamma1", "gamma2", "d", "delta1", "delta2", "x0")


@dataclass(frozen=True, eq=False)
class Model:
    """A parsed model: generator data, market loadings and initial state."""

    params: AffineParams
    market: MarketSpec
    x0: np.ndarray
    heston: HestonDefaultParams | None = None

    @property
    def kind(self) -> str:
        return "affine" if self.heston is None else "heston-default"

    def oracle(self, tol: float = 1e-10) -> MomentOracle:
        """Closed-form oracle for the Heston kind, ODE oracle otherwise."""
        if self.heston is not None:
            return HestonMoments(self.heston)
        return AffineMoments(self.params, self.market, tol=tol)

    def to_dict(self) -> dict:
        if self.heston is not None:
            return {"kind": self.kind, **self.heston.to_dict()}
        out = {"kind": self.kind, **self.params.to_dict(), **self.market.to_dict()}
        out["x0"] = [float(v) for v in self.x0]
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, Model) and self.to_dict() == other.to_dict()

    def __hash__(self) -> int:
        return hash(dumps(self))


def _check_keys(data: dict, required, optional, kind: str) -> None:
    allowed = set(required) | set(optional) | {"kind"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ModelFileError(f"unknown key(s) for kind {kind!r}: {', '.join(unknown)}")
    missing = [k for k in required if k not in data]
    if missing:
        raise ModelFileError(f"missing key(s) for kind {kind!r}: {', '.join(missing)}")


def from_dict(data: dict) -> Model:
    if not isinstance(data, dict):
        raise ModelFileError("model file must hold a JSON object")
    kind = data.get("kind")
    try:
        if kind == "heston-default":
            _check_keys(data, HESTON_REQUIRED, HESTON_OPTIONAL, kind)
            fields = {k: v for k, v in data.items() if k != "kind"}
            for k, v in fields.items():
                if k != "x0" and not isinstance(v, (int, float)):
                    raise ModelFileError(f"{k} must be a number")
            hp = HestonDefaultParams(**{k: (tuple(v) if k == "x0" else float(v)) for k, v in fields.items()})
            params, market = to_affine(hp)
            return Model(params, market, np.asarray(hp.x0, dtype=float), hp)
        if kind == "affine":
            _check_keys(data, AFFINE_REQUIRED, AFFINE_OPTIONAL, kind)
            params = AffineParams(n=data["n"], m=data["m"], a=data["a"], alpha=data["alpha"], b=data["b"],
                                  beta=data["beta"], nu=data.get("nu", ()), mu=data.get("mu", ()))
            market = MarketSpec(e=data["e"], epsilon=data["epsilon"], d=data.get("d", 0.0),
                                delta=data.get("delta"), c=data.get("c", 0.0),
                                gamma=data.get("gamma")).resolved(params.m)
            if market.epsilon.shape != (params.n,):
                raise ModelFileError(f"epsilon must have length n={params.n}")
            if market.delta.shape != (params.m,) or market.gamma.shape != (params.m,):
                raise ModelFileError(f"delta and gamma must have length m={params.m}")
            x0 = np.asarray(data["x0"], dtype=float)
            if x0.shape != (params.n,):
                raise ModelFileError(f"x0 must have length n={params.n}")
            x0.setflags(write=False)
            return Model(params, market, x0)
    except ModelFileError:
        raise
    except (AffinePricingError, TypeError, ValueError, KeyError) as exc:
        raise ModelFileError(f"invalid {kind} model: {exc}") from exc
    raise ModelFileError(f"kind must be 'affine' or 'heston-default', got {kind!r}")


def loads(text: str) -> Model:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return from_dict(data)


def load(path) -> Model:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ModelFileError(f"cannot read model file {path}: {exc.strerror}") from exc
    return loads(text)


def dumps(model: Model) -> str:
    """Canonical JSON: sorted keys, two-space indent, floats in repr form."""
    return json.dumps(model.to_dict(), sort_keys=True, indent=2) + "\n"


def dump(model: Model, path) -> None:
    Path(path).write_text(dumps(model))


def model_hash(model: Model) -> str:
    """SHA-256 of the canonical form."""
    return hashlib.sha256(dumps(model).encode()).hexdigest()
