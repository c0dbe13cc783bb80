"""Exception hierarchy shared by all sgain modules."""


class SgainError(Exception):
    """Base class for all errors raised by this package."""


class InvalidIndexError(SgainError):
    """Subsystem index outside the positive integers."""


class ShapeError(SgainError):
    """Vector or matrix dimensions inconsistent with the network."""


class NumericInputError(SgainError):
    """Non-finite value encountered in a state or input vector."""


class ParameterError(SgainError):
    """Parameter outside its documented range."""


class DerivationError(SgainError):
    """Gain derivation failed (e.g. nonpositive decay rate)."""


class InvalidCertificateError(SgainError):
    """Supplied matrix data cannot certify the requested property."""


class SmallGainViolatedError(SgainError):
    """Spectral small-gain condition does not hold."""


class CannotCertifyError(SgainError):
    """No certificate could be constructed within the configured budget."""


class InternalInconsistencyError(SgainError):
    """A freshly built certificate failed its own verification scan."""


class InsufficientDataError(SgainError):
    """Not enough usable samples for the requested estimate."""


class ResourceError(SgainError):
    """Requested computation exceeds the configured memory budget."""


class UnknownScenarioError(SgainError):
    """Scenario name not in the shipped registry."""
