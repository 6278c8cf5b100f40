"""Exception types shared across the package."""


class NolError(Exception):
    """Base class for package errors."""


class NumericFault(NolError):
    """A non-finite value appeared where a finite one is required."""


class InvalidLabel(NolError):
    """Classification label outside {-1, +1}."""


class DataFormatError(NolError):
    """Malformed input data (parse errors, bad columns, degenerate labels)."""
