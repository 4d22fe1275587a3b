"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter is outside its documented domain (reports the field path)."""


class MaterialParseError(ValueError):
    """Material text failed to parse; carries 1-based line and column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class FileFormatError(ValueError):
    """A binary table/weight file has a bad magic, version, shape, or payload."""


class StreamExhausted(RuntimeError):
    """A finite uniform-variate source ran out of numbers."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or failed a numeric check."""
