"""Exception hierarchy shared by all modules."""


class TraceRegError(Exception):
    """Base class for package errors."""


class InvalidParameterError(TraceRegError, ValueError):
    pass


class DimensionError(TraceRegError, ValueError):
    pass


class InvalidDesignError(TraceRegError, ValueError):
    pass


class MissingOracleError(TraceRegError, ValueError):
    pass


class NumericalError(TraceRegError, ArithmeticError):
    """SVD failure, divergence or any other non-finite numerical result."""


class ShortfallError(TraceRegError):
    """A randomized construction did not reach its target within budget."""

    def __init__(self, message: str, achieved: int, target: int):
        super().__init__(message)
        self.achieved = achieved
        self.target = target


class ParseError(TraceRegError, ValueError):
    def __init__(self, message: str, lineno: int):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
