"""Exception types raised across the package."""


class LwdlError(Exception):
    """Base class for all package errors."""


class InvalidInputError(LwdlError):
    """Non-finite or otherwise malformed numeric input."""


class ShapeError(LwdlError):
    """Incompatible matrix/vector dimensions."""


class DomainError(LwdlError):
    """Value outside the invertible range of an activation."""


class UnsupportedActivationError(LwdlError):
    """Operation not defined for this activation (e.g. inverting ReLU)."""


class FormatError(LwdlError):
    """Malformed dataset or checkpoint file."""


class NumericError(LwdlError):
    """Non-finite value produced during training.

    The offending state (last weight matrix) is attached as ``state`` when
    available so a failed run can be inspected.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class GainExhaustedError(LwdlError):
    """Gain condition still violated after the maximum number of halvings."""
