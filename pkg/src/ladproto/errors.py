"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data problems with 3, numeric problems with 4.
"""


class LadProtoError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigError(LadProtoError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(LadProtoError):
    """Malformed, missing, or infeasible input data."""

    exit_code = 3


class NumericError(LadProtoError):
    """Numeric failure: bad shapes, non-finite values, missing gradients."""

    exit_code = 4


class OntologyError(DataError):
    """The ontology document failed to parse or validate."""


class UnknownClassError(DataError):
    """A class id is not present in the taxonomy."""


class MultiPathError(DataError):
    """A tree-only query was issued for a class with several root paths."""


class InfeasibleSplitError(DataError):
    """The requested label split cannot be formed."""


class InfeasibleTaskError(DataError):
    """An episode task cannot be formed from the available pool."""


class ShapeError(NumericError):
    """Array geometry does not match what an operation requires."""


class StateError(NumericError):
    """An operation was called out of order (e.g. step before backward)."""
