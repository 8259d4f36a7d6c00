"""Exception types raised across the package."""


class DesvqError(Exception):
    """Base class for all package errors."""


class ShapeError(DesvqError, ValueError):
    """Operand shapes are incompatible."""


class InvalidInputError(DesvqError, ValueError):
    """Input values violate a precondition (non-finite, out of range, empty)."""


class InvalidParamError(DesvqError, ValueError):
    """A transform or quantizer parameter is out of its domain."""


class UnsupportedShapeError(ShapeError):
    """The operation is defined only for a restricted family of shapes."""


class NumericalFailure(DesvqError, ArithmeticError):
    """An iterative routine did not converge."""

    def __init__(self, msg, iterations=None):
        super().__init__(msg)
        self.iterations = iterations


class FormatError(DesvqError, ValueError):
    """A container or manifest is malformed."""

    def __init__(self, msg, offset=None):
        if offset is not None:
            msg = f"{msg} (at byte offset {offset})"
        super().__init__(msg)
        self.offset = offset


class CalibrationError(DesvqError, RuntimeError):
    """Calibration aborted; ``record`` holds the partial trace when available."""

    def __init__(self, msg, record=None):
        super().__init__(msg)
        self.record = record
