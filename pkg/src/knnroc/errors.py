"""Exception types shared across the package.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` (including :class:`EstimationError`) to exit code 2.
"""


class ValidationError(ValueError):
    """Input data or arguments violate a documented precondition."""


class NumericalError(ArithmeticError):
    """A computation produced an unusable result (zero denominator, negative variance, ...)."""


class EstimationError(NumericalError):
    """An estimator cannot be evaluated on the given data."""
