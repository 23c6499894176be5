class ValidationError(ValueError):
    """Input data or configuration violates a documented precondition."""


class NumericalError(ArithmeticError):
    """A numerical routine failed (non-positive-definite matrix, empty truncation region, ...)."""
