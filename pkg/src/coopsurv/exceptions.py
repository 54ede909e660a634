"""Exception types shared across the package.

The CLI maps ValidationError/ParseError to exit code 2 and
UndefinedStatisticError to exit code 3.
"""


class CoopsurvError(Exception):
    """Base class for all package errors."""


class DimensionError(CoopsurvError, ValueError):
    """Tensor/array shapes are incompatible for the requested operation."""


class ContractError(CoopsurvError, ValueError):
    """A caller violated an API precondition (programming error)."""


class ValidationError(CoopsurvError, ValueError):
    """User-supplied data or configuration is invalid."""


class ParseError(ValidationError):
    """A file could not be parsed into the expected structure."""


class UndefinedStatisticError(CoopsurvError, ValueError):
    """The requested statistic is undefined on the given data."""


class UndefinedLossError(CoopsurvError, ValueError):
    """A loss term is undefined on the given batch."""


class CheckpointError(CoopsurvError, ValueError):
    """A checkpoint file is malformed or incompatible with the model."""
