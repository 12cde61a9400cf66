"""Exception types shared across the package.

The CLI maps these onto process exit codes (2, 3 and 4 respectively).
"""


class MaltError(Exception):
    """Base class for all package errors."""


class ConfigError(MaltError, ValueError):
    """Invalid parameters, shapes or hypotheses."""


class FormatError(MaltError, ValueError):
    """Malformed model or data file.

    ``field`` names the offending field (or row/column for tabular files).
    """

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NumericalAbort(MaltError, ArithmeticError):
    """A computation produced a non-finite value (e.g. a NaN training loss)."""
