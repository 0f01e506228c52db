"""Exception types shared across the package."""


class PercError(Exception):
    """Base class for all package errors."""


class ParameterError(PercError, ValueError):
    pass


class ResourceLimitError(PercError, MemoryError):
    pass


class FormatError(PercError):
    """Malformed PERC1 stream."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class EmptyClusterError(PercError):
    """No admissible open cluster (e.g. closed origin in the site model)."""


class ContractError(PercError, ValueError):
    """A documented precondition or postcondition was violated."""


class CapExceededError(PercError):
    """Instance too large for exhaustive enumeration."""


class NumericalError(PercError, ArithmeticError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
