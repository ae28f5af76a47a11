"""Exception types raised across the package."""


class InvalidDomainError(ValueError):
    """Box bounds do not describe a non-degenerate domain."""


class SingularEvaluationError(ValueError):
    """Kernel or geometry evaluated at coincident points."""


class MACViolationError(ValueError):
    """A far-field computation was requested for a pair with r_K >= 1."""


class CoverageError(RuntimeError):
    """Interaction lists do not partition the leaf set."""


class EvaluationError(ArithmeticError):
    """A source function returned non-finite values."""
