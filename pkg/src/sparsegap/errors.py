"""Exception hierarchy.

Every domain failure raised by the package derives from
:class:`SparseGapError`; the CLI maps these to exit code 1 and prints the
class name on stderr.
"""


class SparseGapError(Exception):
    """Base class for all domain errors."""


class PreconditionError(SparseGapError, ValueError):
    """An argument violates an operation's documented precondition."""


class InvalidGroundSet(PreconditionError):
    pass


class ShapeError(PreconditionError):
    pass


class ZeroVector(PreconditionError):
    pass


class InvalidAdvice(PreconditionError):
    pass


class PrecisionTooCoarse(PreconditionError):
    pass


class NotACover(SparseGapError):
    pass


class SparsityViolation(SparseGapError):
    pass


class NotASolution(SparseGapError):
    pass


class DecodeInconsistency(SparseGapError):
    pass


class BudgetExceeded(SparseGapError):
    pass


class NonConverged(SparseGapError):
    """Iterative solver hit its iteration cap.

    The best iterate is attached as ``estimate`` so callers can record it
    instead of dropping the run.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class CalibrationFailed(SparseGapError):
    pass


class ConstructionFailed(SparseGapError):
    pass
