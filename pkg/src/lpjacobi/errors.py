"""Exception types shared across the package."""


class LPJacobiError(Exception):
    """Base class for all errors raised by lpjacobi."""


class WindowOverflowError(LPJacobiError):
    """A result would spill outside the integer window it lives on."""


class WindowTooSmallError(LPJacobiError):
    """Certified tail mass outside a window is larger than allowed."""


class AliasingError(LPJacobiError):
    """A theta grid is too coarse for the number of periods in a window."""


class DivisorChainError(LPJacobiError, ValueError):
    """Periods do not form a strict divisor chain."""


class DegeneratePointError(LPJacobiError):
    """Evaluation at a degenerate quasimomentum (theta in {0, 1/2}) or at a
    vanishing discriminant derivative."""


class PreconditionError(LPJacobiError, ValueError):
    """A documented precondition of an estimate does not hold."""


class EmptyWindowError(PreconditionError):
    """The admissible interval for eta0 is empty."""


class NumericalError(LPJacobiError):
    """An eigensolver or quadrature failed; the message names where."""
