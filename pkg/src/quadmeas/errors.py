"""Exception types raised by the quadmeas package.

Everything derives from QuadmeasError so callers can catch the package's
failures with a single except clause while still letting programming errors
(TypeError and friends) propagate.
"""


class QuadmeasError(Exception):
    """Base class for all structured errors raised by this package."""


class ParameterError(QuadmeasError, ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class DimensionMismatchError(QuadmeasError, ValueError):
    """Operands live in Fock spaces of incompatible dimension."""


class GridRangeError(QuadmeasError, ValueError):
    """An outcome grid does not cover the support of the distribution."""


class ZeroProbabilityError(QuadmeasError, ArithmeticError):
    """A conditional state was requested for an outcome of ~zero probability."""


class InfeasibleFeedbackError(QuadmeasError, ValueError):
    """The requested feedback displacement exceeds what the local-oscillator
    amplitude can produce (the required pick-off would be total)."""


class DegenerateCovarianceError(QuadmeasError, ArithmeticError):
    """A Gaussian-state operation hit a singular covariance sub-block."""
