"""Exception types raised across the package."""


class InputDomainError(ValueError):
    """An argument lies outside the domain an operation accepts."""


class DegenerateInputError(ValueError):
    """The input is well-typed but too small to produce an estimate (e.g. an empty subset)."""


class ResourceError(RuntimeError):
    """A requested grid, basis or expansion exceeds a configured size cap."""


class ContractViolationError(ValueError):
    """A user-supplied callable broke its declared contract (e.g. a loss left [0, 1])."""


class ConstructionError(RuntimeError):
    """A polynomial construction could not meet its accuracy target.

    The best achieved error is kept on ``achieved_error`` so callers can
    decide whether to relax the target.
    """

    def __init__(self, message, achieved_error=None):
        super().__init__(message)
        self.achieved_error = achieved_error


class InfeasibleError(RuntimeError):
    """A constrained recovery problem has no feasible point."""
