"""Shared exception types."""


class InvalidParameterError(ValueError):
    """Raised when a caller hands a function arguments outside its contract."""


class DataFormatError(ValueError):
    """Raised when an on-disk dataset or checkpoint fails to parse cleanly."""


class NumericalError(RuntimeError):
    """Raised when training or evaluation produces non-finite values."""
