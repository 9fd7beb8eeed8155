"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numeric/degenerate-model errors -> 3.
"""


class BirdnestError(Exception):
    """Base class for all package errors."""


class DataError(BirdnestError):
    """Bad or unusable input data (malformed rows, missing columns, ...)."""


class DomainError(BirdnestError, ValueError):
    """A mathematical quantity was requested outside its domain."""


class DegenerateModelError(BirdnestError):
    """The data cannot support the requested model (e.g. no temporal spread)."""
