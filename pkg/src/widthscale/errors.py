"""Exception hierarchy.

Structural and domain errors derive from ``ValueError`` and numerical
failures from ``ArithmeticError`` so callers that only care about the broad
category can catch the builtin types.
"""


class WidthScaleError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(WidthScaleError, ValueError):
    """Inputs have the wrong shape or refer to the wrong kind of object."""


class DomainError(WidthScaleError, ValueError):
    """A value lies outside the range an operation accepts."""


class InsufficientDataError(DomainError):
    """Too few records to perform a fit."""


class InfeasibleBudgetError(DomainError):
    """A parameter budget is below the smallest achievable count."""


class EmptyTrajectoryError(DomainError):
    """Pruning stopped before any record could be taken."""


class NumericalError(WidthScaleError, ArithmeticError):
    """A computation produced a non-finite or ill-conditioned result."""


class SingularDesignError(NumericalError):
    """The log-space design matrix does not have full column rank."""


class StepSizeError(NumericalError):
    """A descent update left the admissible region; use a smaller step."""


class NoBracketError(NumericalError):
    """No interval around the target budget could be bracketed."""


class TrainingDivergence(NumericalError):
    """The training loss became non-finite."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class ParseError(StructuralError):
    """An artifact file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class SchemaError(ParseError):
    """An artifact file carries an unexpected schema name or version."""
