from typing import Any, Dict, Optional


class DeconvModeError(Exception):
    """Base class of every error raised by deconvmode."""


class ConfigError(DeconvModeError, ValueError):
    """An invalid configuration value. `field` is the dotted path of the first offender."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(DeconvModeError, ValueError):
    pass


class DataError(DeconvModeError, ValueError):
    """Input data that cannot be used, e.g. a malformed CSV row."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


class DegenerateDataError(DataError):
    pass


class InsufficientLocalDataError(DataError):
    pass


class NumericalError(DeconvModeError, ArithmeticError):
    pass


class SingularDesignError(NumericalError):
    """The local linear design matrix is (numerically) singular at `x`."""

    def __init__(self, x: float, det: float):
        self.x = x
        self.det = det
        super().__init__(
            f"singular local design at x={x:.6g} (det={det:.3e}); data too sparse near x"
        )


class SelectionError(NumericalError):
    def __init__(self, message: str, diagnostics: Optional[Dict[float, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class OracleSearchError(NumericalError):
    pass


class FormulaDomainError(NumericalError):
    pass


class UndefinedDistanceError(NumericalError):
    pass


class GridMismatchError(NumericalError):
    pass


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the CLI exit code (2 config, 3 data, 4 numerical)."""
    if isinstance(error, (ConfigError, DomainError)):
        return 2
    if isinstance(error, DataError):
        return 3
    if isinstance(error, NumericalError):
        return 4
    return 1
