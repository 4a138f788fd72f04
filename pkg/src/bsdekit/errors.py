"""Exception hierarchy shared by all bsdekit modules."""

from __future__ import annotations


class BsdeError(Exception):
    """Base class for every error raised by bsdekit."""


class IndexOutOfRange(BsdeError, IndexError):
    pass


class JumpAtOrBelowMinusOne(BsdeError, ValueError):
    """An atom a_k <= -1 makes the left-jump-inversion undefined."""


class JumpAtOrAboveOne(BsdeError, ValueError):
    """An atom a_k >= 1 makes the right-jump-inversion undefined."""


class HypothesisViolated(BsdeError):
    """The inputs do not satisfy the hypothesis of a checked inequality.

    This is a statement about the inputs, not a failure of the inequality.
    """

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"hypothesis violated at step {step}")


class DegenerateCell(BsdeError, ValueError):
    pass


class InvalidSpace(BsdeError, ValueError):
    pass


class NotAMartingale(BsdeError, ValueError):
    def __init__(self, step: int, residual: float):
        self.step = step
        self.residual = residual
        super().__init__(
            f"process is not a martingale: conditional-mean residual {residual:.3e} at step {step}"
        )


class UndefinedDensity(BsdeError, ValueError):
    """d<M^i>/dmu is undefined: the clock does not charge a jump of <M^i>."""


class SpaceMismatch(BsdeError, ValueError):
    pass


class NotStandard(BsdeError, ValueError):
    def __init__(self, report=None, message: str = "problem is not standard"):
        self.report = report
        super().__init__(message)


class NoConvergence(BsdeError, RuntimeError):
    def __init__(self, stage: str, step: int | None = None, cell: int | None = None,
                 iterations: int = 0, residual: float = float("nan")):
        self.stage = stage
        self.step = step
        self.cell = cell
        self.iterations = iterations
        self.residual = residual
        where = f" at step {step}, cell {cell}" if step is not None else ""
        super().__init__(
            f"{stage} iteration did not converge{where} after {iterations} iterations "
            f"(residual {residual:.3e})"
        )


class MarginViolated(BsdeError, ValueError):
    pass


class AssumptionUnverifiable(BsdeError):
    pass


class StrictnessViolated(BsdeError):
    def __init__(self, what: str, step: int | None, outcome: int | None, value: float):
        self.what = what
        self.step = step
        self.outcome = outcome
        self.value = value
        super().__init__(
            f"strict comparison violated ({what}) at step {step}, outcome {outcome}: {value:.3e}"
        )


class SchemaError(BsdeError, ValueError):
    def __init__(self, errors):
        # errors: list of (path, message)
        self.errors = list(errors)
        lines = "; ".join(f"{p}: {m}" for p, m in self.errors)
        super().__init__(f"invalid scenario: {lines}")


class UnresolvedReference(SchemaError):
    pass


class InvalidDriver(BsdeError, ValueError):
    """A driver fails a structural requirement of the operation using it."""
