"""Exception hierarchy.

The CLI maps these onto exit codes: configuration problems exit with 2,
numeric failures with 3.
"""


class SarPricingError(Exception):
    pass


class ConfigurationError(SarPricingError, ValueError):
    """Invalid scenario, bounds, or network parameters."""


class DomainError(SarPricingError, ValueError):
    """An argument outside the mathematical domain of a function."""


class ShapeError(SarPricingError, ValueError):
    pass


class NumericError(SarPricingError, ArithmeticError):
    """A solver failed to converge or a factorisation broke down."""


class BracketError(NumericError):
    pass


class DegeneracyError(NumericError):
    """``I - rho W`` is not positive definite."""
