"""Exception types raised by the simulator."""


class FairFLError(Exception):
    """Base class for all simulator errors."""


class DimensionError(FairFLError, ValueError):
    def __init__(self, what: str, expected: int, actual: int):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected length {expected}, got {actual}")


class NumericalError(FairFLError, ArithmeticError):
    pass


class DataError(FairFLError, ValueError):
    pass


class CSVFormatError(DataError):
    """Malformed CSV input. ``row`` is 1-based over data rows (header excluded)."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class MissingColumnError(CSVFormatError):
    pass


class NonNumericCellError(CSVFormatError):
    pass


class EmptyFileError(CSVFormatError):
    pass


class InvalidValueError(CSVFormatError):
    pass


class AggregationError(FairFLError, ValueError):
    pass


class AttackError(FairFLError, ValueError):
    pass


class EstimationError(AttackError):
    pass


class ConfigError(FairFLError, ValueError):
    """Invalid experiment configuration. ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
