"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class WGCMError(ValueError):
    """Base class for all errors raised by :mod:`wgcm`."""


class MissingFile(WGCMError):
    pass


class MissingColumn(WGCMError):
    def __init__(self, column: str):
        super().__init__(column)
        self.column = column


class ParseError(WGCMError):
    """A CSV cell could not be parsed as a real number.

    ``row`` is the 1-based data row (the header is not counted).
    """

    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"({row}, {column}): {value!r}")
        self.row = row
        self.column = column
        self.value = value


class EmptyData(WGCMError):
    pass


class NonFinite(WGCMError):
    pass


class DegenerateSplit(WGCMError):
    pass


class IndexOutOfRange(WGCMError):
    pass


class TooFewSamples(WGCMError):
    pass


class InvalidHyperparameter(WGCMError):
    pass


class DimensionMismatch(WGCMError):
    pass


class LengthMismatch(WGCMError):
    pass


class DegenerateResiduals(WGCMError):
    """Residual products have (numerically) zero variance.

    ``label`` identifies the offending statistic as a ``(j, l, k)`` triple
    when known.
    """

    def __init__(self, message: str, label: tuple[int, int, int] | None = None):
        if label is not None:
            message = f"{message} at (j, l, k) = {label}"
        super().__init__(message)
        self.label = label


class EmptyInput(WGCMError):
    pass


class NotDecomposable(WGCMError):
    pass


class InvalidCorrelation(WGCMError):
    pass


class InvalidP(WGCMError):
    pass


class InvalidParameter(WGCMError):
    pass
