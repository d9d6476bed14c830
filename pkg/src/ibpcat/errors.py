"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes or index ranges do not agree."""


class DegenerateUpdateError(ArithmeticError):
    """A Woodbury rank-one downdate hit a non-positive denominator.

    Callers are expected to fall back to dense linear algebra.
    """


class NewtonConvergenceError(RuntimeError):
    """Newton's method exhausted its iteration budget.

    Carries the last iterate so callers can inspect how close it got.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class BoundInconsistencyError(RuntimeError):
    """The variational bound decreased beyond numerical slack.

    All updates are safeguarded, so this indicates a bug rather than a
    data problem.
    """
