"""Exception hierarchy shared across the package."""


class PWCoverError(Exception):
    """Base class for all errors raised by pwcover."""


class InvalidInputError(PWCoverError, ValueError):
    """Malformed data: dimension mismatch, non-finite values, bad sizes."""


class InfeasibleError(PWCoverError):
    """The target marginal cannot absorb the source mass."""


class SizeCapError(PWCoverError):
    """A requested enumeration exceeds its configured cap."""


class InvalidStateError(PWCoverError):
    """An operation was called on a state that does not support it."""


class NonConvergenceError(PWCoverError):
    """An iterative solver stopped at its iteration cap."""


class DeadlineExceededError(PWCoverError):
    """A run overran its wall-clock budget; checked between steps."""
