"""Exception and warning types shared across the package."""

from __future__ import annotations


class ThinPlateError(Exception):
    """Base class for runtime errors raised by the package."""


class DomainViolation(ThinPlateError):
    """A displacement gradient left the neighbourhood where the energy is evaluated."""

    def __init__(self, message: str, index=None, value: float | None = None):
        super().__init__(message)
        self.index = index
        self.value = value


class StabilityViolation(ThinPlateError):
    """The explicit integrator blew up (energy jump within a single step)."""


class NoContraction(ThinPlateError):
    """A fixed-point iteration failed to stay in its ball or to converge."""


class SingularOperator(ThinPlateError):
    """A linear solve hit the kernel of the operator."""


class EigenFailure(ThinPlateError):
    """An eigenvalue computation did not produce a usable extremal pair."""


class ZeroField(ThinPlateError):
    """A field vanished after projection, so a ratio is undefined."""


class InsufficientData(ThinPlateError):
    """Too few samples for a regression."""


class ConfigError(ThinPlateError):
    """An experiment configuration failed validation."""


class AliasWarning(UserWarning):
    """Spectral content near the resolution limit; derivatives may be aliased."""


class RegularityWarning(UserWarning):
    """Supplied plate data decays slower than the expected smoothness class."""
