"""
Exceptions raised by brwcap.
"""


class BrwcapError(Exception):
    """Base class for all library errors."""


class InvalidDistributionError(BrwcapError, ValueError):
    """An offspring or step distribution violates its invariants."""


class ForestSizeError(BrwcapError):
    """A forest would exceed the configured vertex ceiling."""


class QuadraticCostError(BrwcapError):
    """An exact O(n^2) computation was requested above its ceiling."""


class AcceptanceFloorError(BrwcapError):
    """A rejection sampler's acceptance probability is below the configured floor."""


class MemoryBudgetError(BrwcapError, MemoryError):
    """A planned allocation does not fit in the memory budget."""


class ToleranceNotMetError(BrwcapError, ArithmeticError):
    """A numerical refinement stalled before reaching its tolerance."""


class CapacitySolveError(BrwcapError, ArithmeticError):
    """The capacity linear system is singular, ill-conditioned or inconsistent."""


class InsufficientDataError(BrwcapError, ValueError):
    """Not enough records to fit an exponent."""


class ForestInvariantError(BrwcapError, AssertionError):
    """A forest violates one of its structural invariants."""
