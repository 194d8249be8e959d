"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class AffinePricingError(Exception):
    """Base class for library errors."""


class ModelStructureError(AffinePricingError, ValueError):
    """Inconsistent dimensions or malformed model data."""


class AdmissibilityError(AffinePricingError, ValueError):
    """Parameters violate the admissibility conditions."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{v.condition}: {v.message}" for v in self.violations))


class ModelFileError(AffinePricingError, ValueError):
    """A model file could not be parsed."""


class MomentExplosionError(AffinePricingError, ArithmeticError):
    """The Riccati solution exploded before the requested maturity."""

    def __init__(self, message: str, explosion_time: float | None = None, z=None):
        self.explosion_time = explosion_time
        self.z = z
        super().__init__(message)


class DampingInfeasibleError(MomentExplosionError):
    """The moment needed by a Fourier damping parameter is infinite."""

    def __init__(self, message: str, damping: float, explosion_time: float | None = None):
        self.damping = damping
        super().__init__(message, explosion_time=explosion_time)


class QuadratureError(AffinePricingError, ArithmeticError):
    """Fourier quadrature produced an inconsistent result."""


class DegenerateHedgeError(AffinePricingError, ArithmeticError):
    """The hedge system is numerically singular."""

    def __init__(self, message: str, rank: int | None = None, determinant: float | None = None):
        self.rank = rank
        self.determinant = determinant
        super().__init__(message)
