"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raise the most specific
class that applies.
"""


class GeofuseError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(GeofuseError):
    """Invalid configuration: bad parameter values, missing files, unknown modes."""

    exit_code = 2


class DataError(GeofuseError):
    """Invalid data: out-of-range coordinates, shape mismatches, bad labels."""

    exit_code = 3


class NumericError(GeofuseError):
    """Numerical failure: non-finite gradients, degenerate densities."""

    exit_code = 4


class InvalidCoordinateError(DataError):
    """Latitude/longitude outside the valid range, or non-finite."""


class AbstainError(GeofuseError):
    """A prediction was requested but the configured fallback is to abstain."""
