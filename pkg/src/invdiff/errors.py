"""Exception types shared across the package.

Invalid arguments raise plain ValueError; the classes below cover the
failure modes that need to be distinguished by callers (and mapped to
distinct CLI exit codes).
"""


class NumericError(RuntimeError):
    """Non-finite values encountered where finite math was required."""


class FormatError(ValueError):
    """Malformed binary file. ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(ValueError):
    """Metric undefined for the given inputs (e.g. single-class AU-ROC)."""
