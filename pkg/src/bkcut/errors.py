"""Exception types shared across the package."""


class BkcutError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(BkcutError, ValueError):
    """Malformed user input: files, arguments, dimension mismatches."""


class InfeasibleIterateError(BkcutError):
    """An iterate violates the constraints needed to linearize around it.

    The caller is expected to repair the iterate or restart from a fresh
    initialization.
    """


class NumericFailureError(BkcutError):
    """Non-finite values appeared inside an iterative solver."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DegenerateRunError(BkcutError):
    """A run collapsed: the balance value of some column fell to ~zero."""
