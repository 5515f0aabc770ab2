"""Exception hierarchy shared by the library and the command line."""


class CotwaveError(Exception):
    """Base class for all errors raised by cotwave."""


class ConfigurationError(CotwaveError, ValueError):
    """An option or parameter combination is not supported."""


class ArgumentError(CotwaveError, ValueError):
    """A function argument violates its documented precondition."""


class DataError(CotwaveError, ValueError):
    """Observed data cannot be used (out of range, too few rows, ...)."""


class DegenerateDataError(DataError):
    """Data is well-formed but degenerate (empty arm, constant column)."""
