"""Exception hierarchy shared by every module of the package."""

import numpy as np

__all__ = [
    "FilterError",
    "DimensionMismatch",
    "IndexOutOfRange",
    "SingularMatrix",
    "NotPsd",
    "EmptyInput",
    "ZeroTotalWeight",
    "InvalidParams",
    "NonDifferentiablePoint",
    "ConfigError",
    "AllZeroWeights",
]


class FilterError(Exception):
    """Base class for all errors raised by turbofilter."""


class DimensionMismatch(FilterError, ValueError):
    pass


class IndexOutOfRange(FilterError, IndexError):
    pass


class SingularMatrix(FilterError, np.linalg.LinAlgError):
    pass


class NotPsd(FilterError, ValueError):
    pass


class EmptyInput(FilterError, ValueError):
    pass


class ZeroTotalWeight(FilterError, ValueError):
    pass


class InvalidParams(FilterError, ValueError):
    pass


class NonDifferentiablePoint(FilterError, ValueError):
    pass


class ConfigError(FilterError, ValueError):
    pass


class AllZeroWeights(FilterError, RuntimeError):
    """Every particle weight vanished; the particle filter has diverged.

    ``step`` holds the time index at which it happened, when known.
    """

    def __init__(self, message="all particle weights are zero", step=None):
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)
        self.step = step
