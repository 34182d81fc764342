"""Exception hierarchy shared by all gatedvol modules."""


class GatedVolError(Exception):
    """Base class for all package errors."""


class ZeroMass(GatedVolError, ValueError):
    pass


class DivergentMoment(GatedVolError, ValueError):
    """Kernel mass or first moment does not converge (IGARCH-like input)."""


class GridTooCoarse(GatedVolError, ValueError):
    pass


class OrderOutOfRange(GatedVolError, ValueError):
    pass


class InsufficientHistory(GatedVolError, ValueError):
    pass


class NonmonotoneDates(GatedVolError, ValueError):
    pass


class NonpositiveVariance(GatedVolError, FloatingPointError):
    """A variance recursion produced h_t <= 0 or a non-finite value.

    Attributes
    ----------
    t : int
        First offending period.
    params : object
        Parameters in use when the failure happened.
    """

    def __init__(self, message, t=None, params=None):
        super().__init__(message)
        self.t = t
        self.params = params


class UnstableRegion(GatedVolError, ValueError):
    pass


class NoConvergence(GatedVolError, RuntimeError):
    pass


class DegenerateHessian(GatedVolError, ArithmeticError):
    pass


class WindowTooShort(GatedVolError, ValueError):
    pass


class SpecHasNoFractionalGate(GatedVolError, ValueError):
    pass


class EmptySample(GatedVolError, ValueError):
    pass


class NonpositiveES(GatedVolError, ValueError):
    pass


class SampleTooShort(GatedVolError, ValueError):
    pass


class ParseError(GatedVolError, ValueError):
    """CSV or config parse failure; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyFile(GatedVolError, ValueError):
    pass


class ConfigError(GatedVolError, ValueError):
    pass
