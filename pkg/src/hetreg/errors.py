"""Exception hierarchy used across the package."""


class HetregError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(HetregError, ValueError):
    pass


class InvalidInputError(HetregError, ValueError):
    pass


class InvalidStructureError(HetregError, ValueError):
    pass


class InvalidConfigError(HetregError, ValueError):
    pass


class NumericalFailure(HetregError, ArithmeticError):
    """Raised when an iterate produces a non-finite objective."""

    def __init__(self, message, iteration=None, subgroup=None):
        super().__init__(message)
        self.iteration = iteration
        self.subgroup = subgroup


class UnsupportedPrediction(HetregError):
    """Subgroup membership of a new sample cannot be decided without its response."""


class AllStartsFailed(HetregError):
    def __init__(self, errors):
        lines = "; ".join(f"start {i}: {e}" for i, e in errors)
        super().__init__(f"all starts failed: {lines}")
        self.errors = errors
