"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """An argument lies outside the operation's domain."""


class InvalidGrid(InvalidArgument):
    """A time grid cannot be used (unsorted, duplicated, or not positive definite)."""


class CapacityError(RuntimeError):
    """A request would exceed a configured memory cap."""


class ToleranceNotMet(RuntimeError):
    """A numerical procedure failed to reach its requested accuracy.

    Carries the best estimate and its error bound so callers can decide
    whether to use it anyway.
    """

    def __init__(self, message, estimate=None, error=None):
        super().__init__(message)
        self.estimate = estimate
        self.error = error
