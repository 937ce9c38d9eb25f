"""Exception types raised across the package."""


class KPKError(Exception):
    """Base class for every error raised by kpk."""


class ShapeError(KPKError, ValueError):
    """Operand dimensions do not agree."""


class ResourceError(KPKError, MemoryError):
    """A requested allocation exceeds the configured element cap."""


class InfeasibleError(KPKError, ValueError):
    """A compression target cannot be met by the representation."""

    def __init__(self, message, max_ratio=None):
        super().__init__(message)
        self.max_ratio = max_ratio


class DataError(KPKError, ValueError):
    """Input data is non-finite or otherwise unusable."""


class NumericError(KPKError, ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FormatError(KPKError, ValueError):
    """A file does not follow the expected binary layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
