"""Exception types raised across the package."""


class SurfelSimError(Exception):
    """Base class for all package errors."""


class ContractViolation(SurfelSimError, ValueError):
    """An operation was called with inputs that break its preconditions."""


class UnsupportedDegreeError(SurfelSimError, ValueError):
    pass


class OutOfRangeError(SurfelSimError, ValueError):
    pass


class NonFiniteError(SurfelSimError, FloatingPointError):
    """Raised when a gradient or loss becomes NaN/inf.

    ``group`` names the offending parameter group and ``iteration`` the
    training step, when known.
    """

    def __init__(self, message, group=None, iteration=None):
        super().__init__(message)
        self.group = group
        self.iteration = iteration


class FormatError(SurfelSimError, ValueError):
    """Corrupt, truncated or version-mismatched file."""


class ConfigError(SurfelSimError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""
