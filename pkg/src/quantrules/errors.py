"""Shared exception types."""


class QuantrulesError(Exception):
    """Base class for errors raised by this package."""


class ParseError(QuantrulesError):
    """Malformed input document; carries a 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TypeMismatchError(QuantrulesError):
    """A value or column has the wrong kind for the requested operation."""


class ResolutionError(QuantrulesError):
    """A name (statistic, column) could not be resolved."""


class EmptyStatisticError(QuantrulesError):
    """A rule produced no statistic values (all rows missing or filtered)."""


class DivergenceError(QuantrulesError):
    """Adaptation hit a non-finite loss or gradient; .trace holds rows up to failure."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
