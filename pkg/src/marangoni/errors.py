"""Exception hierarchy.

Two families are distinguished because the command line maps them to
different exit codes: precondition failures (bad input, violated
assumptions) and numerical failures (non-convergence, singular solves).
"""
from __future__ import annotations


class PreconditionError(ValueError):
    """Input violates a documented precondition."""

    def __init__(self, message: str = "", **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class NumericalError(RuntimeError):
    """A numerical procedure failed to reach its tolerance."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


# precondition family
class SupportViolation(PreconditionError):
    pass


class MeanViolation(PreconditionError):
    pass


class MismatchedBases(PreconditionError):
    pass


class CFLViolation(PreconditionError):
    pass


# numerical family
class NonConvergence(NumericalError):
    pass


class GapViolation(NumericalError):
    pass


class BranchError(NumericalError):
    pass


class PoleError(NumericalError):
    pass


class QuadratureFailure(NumericalError):
    pass


class ContourThroughRoot(NumericalError):
    pass


class BudgetExceeded(NumericalError):
    pass


class BVPSingular(NumericalError):
    pass


class DegeneratePairing(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class PivotUnderflow(NumericalError):
    pass


class DecompositionFailed(NumericalError):
    pass


class StepSizeUnderflow(NumericalError):
    pass


class Blowup(NumericalError):
    pass


class NaNDetected(NumericalError):
    pass
