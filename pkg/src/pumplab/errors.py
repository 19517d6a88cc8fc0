"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 1,
DataError -> 2, ModelError -> 3.
"""


class PumplabError(Exception):
    """Base class for all package errors."""


class ConfigError(PumplabError):
    """Bad or inconsistent run configuration."""


class DataError(PumplabError):
    """Malformed or contradictory input data."""


class CsvFormatError(DataError):
    """A delimited input row failed to parse; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ModelError(PumplabError):
    """Model training or application failure."""


class ConvergenceError(ModelError):
    """Optimizer hit its iteration cap; `model` holds the last iterate."""

    def __init__(self, message: str, model=None):
        super().__init__(message)
        self.model = model
