"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the region where a formula is defined."""


class NumericalError(ArithmeticError):
    """A numerical routine (eigensolver, factorization) failed."""


class DataFormatError(ValueError):
    """An input data file is malformed or holds non-finite values."""
