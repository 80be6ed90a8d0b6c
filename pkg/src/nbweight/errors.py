"""Exception types shared across the package."""


class DataError(ValueError):
    """Input data violates a precondition (bad CSV, bad ids, bad labels)."""


class NumericalError(ArithmeticError):
    """A numerical procedure produced a non-finite value."""
