"""Exception hierarchy shared by the library and the CLI."""

from __future__ import annotations


class MarketError(Exception):
    """Base class for all errors raised by scoremarket."""


class DomainError(MarketError, ValueError):
    """An input lies outside the domain of a model function."""


class DataError(MarketError, ValueError):
    """Input data is malformed or inconsistent with the model."""


class NumericError(MarketError, ArithmeticError):
    """A numerical procedure degenerated or failed to converge."""


class DegeneracyError(NumericError):
    """The preferability recursion hit a nonpositive weight or a vanishing denominator."""

    def __init__(self, message: str, school: int | str | None = None):
        super().__init__(message)
        self.school = school


class KnifeEdgeError(NumericError):
    """An equilibrium derivative was requested where it is undefined (unclipped cutoff at zero)."""

    def __init__(self, message: str, school: int | str | None = None):
        super().__init__(message)
        self.school = school


class InfeasibleTargetError(DomainError):
    """A target demand exceeds what the school can attract at a zero cutoff."""

    def __init__(self, message: str, bound: float):
        super().__init__(message)
        self.bound = bound
