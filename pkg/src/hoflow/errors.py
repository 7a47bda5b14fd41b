"""Exception types raised by hoflow."""


class HoflowError(Exception):
    """Base class for all library errors."""


class NonFiniteError(HoflowError, ValueError):
    """A field contains NaN or Inf components."""


class GridMismatchError(HoflowError, ValueError):
    """Two fields that must share a grid do not."""


class DegenerateMetricError(HoflowError, ValueError):
    """A metric failed the positive-definiteness floor.

    Attributes:
        index: grid multi-index of the worst point.
        eigenvalue: smallest eigenvalue found there.
    """

    def __init__(self, message, index=None, eigenvalue=None):
        super().__init__(message)
        self.index = index
        self.eigenvalue = eigenvalue


class UsageError(HoflowError, ValueError):
    """Invalid slot choice or incompatible arguments."""


class InconclusiveSymbolError(HoflowError, RuntimeError):
    """Symbol fit residual too large: operator is not of the expected order."""


class DiffeomorphismError(HoflowError, ValueError):
    """A map left the regime where it is a local diffeomorphism."""
