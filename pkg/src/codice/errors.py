"""Exception types shared across the package."""


class CodiceError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(CodiceError, ValueError):
    """A schema is malformed, or data does not conform to it."""


class RowError(SchemaError):
    """A single input row failed validation.

    Attributes
    ----------
    row : int
        Zero-based data row index (header excluded).
    """

    def __init__(self, row: int, message: str):
        super().__init__(f"row {row}: {message}")
        self.row = row


class ConfigurationError(CodiceError, ValueError):
    """Incompatible or missing configuration."""


class AlreadyDesiredError(CodiceError):
    """The factual instance already achieves the desired outcome."""


class EigenSolverError(CodiceError, RuntimeError):
    """Iterative eigensolver failed to converge."""

    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(f"{message} (iterations={iterations}, residual={residual:.3e})")
        self.iterations = iterations
        self.residual = residual
