"""Exception hierarchy shared across the package."""


class GSSplatError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ContractError(GSSplatError, ValueError):
    """Inputs violate a shape or state contract (channel counts, stale forward state...)."""

    exit_code = 2


class FormatError(GSSplatError):
    """A file or document does not follow the expected on-disk format."""

    exit_code = 3


class VersionError(FormatError):
    pass


class CorruptionError(FormatError):
    """Data ended early or failed an internal consistency check."""


class ConfigurationError(GSSplatError, ValueError):
    exit_code = 2


class ReconstructionError(GSSplatError):
    exit_code = 3


class NumericalError(GSSplatError, ArithmeticError):
    """Training hit too many non-finite losses/gradients."""

    exit_code = 4
