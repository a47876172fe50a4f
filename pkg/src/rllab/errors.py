"""Exception hierarchy shared by every rllab module."""

from __future__ import annotations


class RllabError(Exception):
    """Base class for all library errors."""


class InvalidParameter(RllabError, ValueError):
    pass


class NotPositiveSemidefinite(RllabError, ValueError):
    pass


class NotPositiveDefinite(RllabError, ValueError):
    pass


class RankDegenerate(RllabError, ValueError):
    pass


class SchemaError(RllabError, ValueError):
    pass


class DegenerateConditional(RllabError, ArithmeticError):
    """Residual variance vanished, so the explained/residual ratio is unbounded."""


class ConvergenceFailure(RllabError, RuntimeError):
    """An iterative solver ran out of iterations before certifying optimality."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual


class IterationLimitExceeded(RllabError, RuntimeError):
    """SmartScaling hit its iteration cap; ``trace`` holds every halving so far."""

    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = trace
