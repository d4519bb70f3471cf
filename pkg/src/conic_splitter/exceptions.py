"""Exception types raised across the package."""


class ConicSplitterError(Exception):
    """Base class for all package errors."""


class DimensionError(ConicSplitterError, ValueError):
    """Vector or matrix sizes do not agree."""


class InputError(ConicSplitterError, ValueError):
    """Problem data is malformed (non-finite entries, bad shapes, bad parameters)."""


class FactorizationError(ConicSplitterError, ArithmeticError):
    """A zero or non-finite pivot was met during LDL^T factorization."""


class UsageError(ConicSplitterError):
    """An operation was called on a result with the wrong status."""


class SolverStatusError(ConicSplitterError):
    """The solver finished without a usable verdict (iteration limit, indeterminate)."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ParseError(ConicSplitterError, ValueError):
    """Input file could not be parsed; carries 1-based line and column."""

    def __init__(self, message, line, column=1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
