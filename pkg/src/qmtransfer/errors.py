"""Exception types shared across the package.

Invalid arguments raise plain ValueError; the classes here carry extra
context (row indices, epochs, condition estimates) that callers and the
CLI surface in messages.
"""


class SchemaError(ValueError):
    """A required column is missing or file layouts disagree."""


class ParseError(ValueError):
    """A cell could not be parsed as a number.

    Attributes
    ----------
    row : int
        1-based data row index, header excluded.
    column : str
        Column name of the offending cell.
    """

    def __init__(self, message: str, row: int, column: str):
        super().__init__(message)
        self.row = row
        self.column = column


class EmptyInputError(ValueError):
    """The input holds no usable rows."""


class TrainingDivergenceError(RuntimeError):
    """Training hit a non-finite loss or non-finite weights."""

    def __init__(self, message: str, epoch: int, learning_rate: float):
        super().__init__(message)
        self.epoch = epoch
        self.learning_rate = learning_rate


class NumericalError(RuntimeError):
    """A linear solve failed numerically.

    condition_estimate is the estimated condition number of the system
    that failed, when available.
    """

    def __init__(self, message: str, condition_estimate: float | None = None):
        super().__init__(message)
        self.condition_estimate = condition_estimate
