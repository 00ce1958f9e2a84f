"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class SlhjbError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(SlhjbError, ValueError):
    pass


class OutOfDomainError(SlhjbError, ValueError):
    pass


class InvalidStepError(InvalidArgumentError):
    pass


class NonFiniteValueError(SlhjbError, ValueError):
    pass


class ExpressionError(SlhjbError, ValueError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, message: str, position: int, text: str = "") -> None:
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


class DifferentiationError(ExpressionError):
    pass


class ConvergenceError(SlhjbError, RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int) -> None:
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (last residual {residual:.3e} after {iterations} iterations)")


class EnumerationLimitError(SlhjbError, RuntimeError):
    def __init__(self, count: int, limit: int) -> None:
        self.count = count
        self.limit = limit
        super().__init__(f"brute-force enumeration needs {count} sequences, limit is {limit}")


class MissingBoundError(SlhjbError, ValueError):
    pass


class StudyAborted(SlhjbError, RuntimeError):
    """A refinement study stopped early; ``partial`` holds the completed records."""

    def __init__(self, message: str, partial) -> None:
        self.partial = partial
        super().__init__(message)
