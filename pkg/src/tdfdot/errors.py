"""Exception hierarchy shared by the forward, peak and reconstruction layers."""


class TdfdotError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(TdfdotError, ValueError):
    """Invalid input values (type invariants, malformed configuration)."""


class NumericalFailure(TdfdotError):
    """A numerical routine could not deliver the requested accuracy."""


class QuadratureFailure(NumericalFailure):
    """Adaptive quadrature hit its subdivision cap before meeting tolerance."""


class WindowTooShort(NumericalFailure):
    """The sampled response never decayed inside the hard time cap."""


class Unpeaked(NumericalFailure):
    """The sampled response has its maximum on the first or last sample."""


class BracketFailure(NumericalFailure):
    """No sign change was found while expanding a root bracket."""


class DomainError(TdfdotError, ValueError):
    """Argument outside the domain on which a function is defined."""


class InconsistentMeasurement(TdfdotError):
    """A measured peak time cannot be produced by any physical target.

    ``measurement`` carries the offending input (peak time, pair, ...) so
    callers can report it.
    """

    def __init__(self, message, measurement=None):
        super().__init__(message)
        self.measurement = measurement


class ValidityViolation(InconsistentMeasurement):
    """Lifetime too short for the approximate peak-time equation to have a root."""


class NoRoot(InconsistentMeasurement):
    """The inverse solve in the distance parameter has no bracketed root."""


class NoPhysicalDepth(InconsistentMeasurement):
    """The recovered distance parameter implies a non-positive depth."""


class DegeneratePair(ConfigurationError):
    """A source-detector pair whose two endpoints coincide."""


class OracleFailure(TdfdotError):
    """A peak-time provider could not answer a query."""


class MaxIterations(NumericalFailure):
    """An iterative reconstruction did not terminate within its budget."""


class NoMinimaFound(TdfdotError):
    """A boundary scan produced no strict local minimum."""


class CardinalityMismatch(ConfigurationError):
    """Truth and recovered target lists differ in length."""
