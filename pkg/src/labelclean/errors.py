"""Exception types shared across the package."""


class LabelCleanError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(LabelCleanError):
    """Invalid configuration: bad dimensions, unknown kinds, out-of-range values."""


class DimensionMismatchError(ConfigurationError):
    """An array's shape does not match what the model or spec expects."""


class ParseError(LabelCleanError):
    """A data file could not be parsed; carries row/column context."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class NumericDivergenceError(LabelCleanError):
    """Training or an iterative solver produced a non-finite value."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message if index is None else f"{message} (at index {index})")


class LissaDivergenceError(NumericDivergenceError):
    """The stochastic inverse-curvature recursion diverged."""


class SizeCapError(LabelCleanError):
    """A dense curvature matrix was requested for a model above the size cap."""


class NoCandidatesError(LabelCleanError):
    """Counter-example scoring was asked to rank an empty candidate list."""


class PendingDecisionError(LabelCleanError):
    """A session advance was attempted while an annotator decision is pending."""


class StaleQueryError(LabelCleanError):
    """A decision referenced a query id that is not the pending one."""


class StreamExhaustedError(LabelCleanError):
    """The example stream for a session has no more examples."""
