"""Exception types shared across the package."""


class CrossedLmmError(Exception):
    """Base class for all library errors."""


class NonFiniteError(CrossedLmmError):
    """A value that must be finite is NaN or infinite."""


class WidthMismatchError(CrossedLmmError):
    """Covariate vector length differs from the dataset width."""


class MissingInterceptError(CrossedLmmError):
    """First covariate component is not exactly 1."""


class EmptyDatasetError(CrossedLmmError):
    """No observations."""


class MalformedHeaderError(CrossedLmmError):
    """File header does not match the row_id,col_id,y,x1..xp schema."""


class ParseError(CrossedLmmError):
    """A record field failed to parse; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateCellError(CrossedLmmError):
    """Same (row, col) cell observed twice under the 'error' dedup policy."""


class SingularDesignError(CrossedLmmError):
    """Normal equations are numerically singular."""


class SingularMomentSystemError(CrossedLmmError):
    """The 3x3 moment system is numerically singular (degenerate pattern)."""


class SingularCovarianceError(CrossedLmmError):
    """Dense covariance matrix is not positive definite."""


class TooLargeError(CrossedLmmError):
    """Instance exceeds a dense-oracle size guard."""
