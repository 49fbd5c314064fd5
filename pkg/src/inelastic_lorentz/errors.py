"""Exception types raised by the simulation library."""


class LorentzError(Exception):
    """Base class for all library errors."""


class UnsupportedParameterError(LorentzError, ValueError):
    """A model parameter lies outside the supported range (e.g. |a| = 0)."""


class NumericError(LorentzError, ArithmeticError):
    """An iterative numerical routine failed to converge."""


class DegenerateBisectrixError(LorentzError, ValueError):
    """The scattering direction is antiparallel to the velocity."""


class OutOfRangeError(LorentzError, ValueError):
    """A query lies beyond the simulated time horizon."""


class InsufficientDataError(LorentzError, ValueError):
    """Too few post-burn-in samples for the requested estimate."""


class EstimationError(LorentzError, ArithmeticError):
    """An estimate is inconsistent beyond statistical noise."""


class ConfigError(LorentzError, ValueError):
    """Invalid run configuration."""
