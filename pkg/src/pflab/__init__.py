"""Spectral laboratory for time-periodic particle-field systems on flat tori."""

from .errors import (
    AmbiguousLift,
    ConfigError,
    ConstraintViolation,
    DegenerateOrbit,
    InsufficientData,
    NoConvergence,
    PflabError,
    RationalResonance,
    ResonanceError,
)

__version__ = "0.1.0"
__all__ = ["AmbiguousLift", "ConfigError", "ConstraintViolation", "DegenerateOrbit", "InsufficientData",
           "NoConvergence", "PflabError", "RationalResonance", "ResonanceError", "__version__"]
