"""Exception hierarchy shared across the package.

Two broad families matter for the CLI exit-code contract: ``DataError``
(bad or inconsistent input data, exit code 2) and ``NumericError``
(failures inside numeric computation, exit code 3).
"""


class DataError(Exception):
    """Base class for input-data problems."""


class ParseError(DataError):
    """A line of an input file could not be parsed."""

    def __init__(self, path, line_number, message):
        self.path = path
        self.line_number = line_number
        super().__init__(f"{path}:{line_number}: {message}")


class EmptyDatasetError(DataError):
    """A pipeline stage produced or received an empty edge set."""


class AlignmentError(DataError):
    """Row counts of an auxiliary file disagree with the dataset."""


class FormatError(DataError):
    """A binary or tabular file does not match its expected layout."""


class InvariantError(DataError):
    """A structural invariant of a data object is violated."""


class NumericError(Exception):
    """Base class for failures inside numeric computation."""


class ShapeError(NumericError):
    """Array dimensions do not match the operation's contract."""


class DegenerateInputError(NumericError):
    """An input is degenerate for the requested operation (e.g. zero norm)."""


class InsufficientBatchError(NumericError):
    """A pairwise computation needs at least two rows."""


class UndefinedTestError(NumericError):
    """A statistical test is undefined on the given input."""
