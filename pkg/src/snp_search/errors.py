"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class SnPError(Exception):
    exit_code = 2


class ConfigError(SnPError):
    """Bad run configuration: missing files, invalid budget, bad flags."""

    exit_code = 1


class DataFormatError(SnPError, ValueError):
    """Input data does not parse or violates a record invariant."""

    exit_code = 2


class NumericError(SnPError, ArithmeticError):
    """A numeric routine failed (eigensolver non-convergence, undefined statistic)."""

    exit_code = 3


class NearSingularWarning(UserWarning):
    """Covariance spectrum had clearly negative eigenvalues that were clamped."""
