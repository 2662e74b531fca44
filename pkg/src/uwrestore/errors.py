"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` -> 2, ``NumericalError`` -> 3.
"""


class DataError(ValueError):
    """Input data is missing, malformed or degenerate."""


class NumericalError(RuntimeError):
    """A solver produced a non-finite value or otherwise broke down."""
