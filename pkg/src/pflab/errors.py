"""Exception types shared across the package."""

from __future__ import annotations


class PflabError(Exception):
    """Base class for all package errors."""


class ConstraintViolation(PflabError, ValueError):
    """A point is off the constraint submanifold beyond tolerance."""


class AmbiguousLift(PflabError, ValueError):
    """Consecutive loop samples are too far apart to lift unambiguously."""


class ResonanceError(PflabError):
    """A small divisor fell below the certified threshold.

    ``witness`` holds the offending (m, n) pair and ``divisor`` its value.
    """

    def __init__(self, message: str, witness=None, divisor: float | None = None):
        super().__init__(message)
        self.witness = witness
        self.divisor = divisor


class RationalResonance(ResonanceError):
    """sigma coincides with a rational of small denominator."""


class NoConvergence(PflabError):
    """An iterative solver stopped without meeting its tolerance.

    ``best`` carries the best iterate found and ``trace`` whatever diagnostics
    the solver recorded (distance or action history).
    """

    def __init__(self, message: str, best=None, trace=None):
        super().__init__(message)
        self.best = best
        self.trace = trace


class DegenerateOrbit(NoConvergence):
    """The shooting Jacobian is singular: the orbit is not isolated."""


class InsufficientData(PflabError, ValueError):
    """Too few significant coefficients for a fit."""


class ConfigError(PflabError, ValueError):
    """Configuration failed validation; ``violations`` lists (path, message)."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{p}: {m}" for p, m in self.violations)
        super().__init__(f"invalid configuration: {lines}")
