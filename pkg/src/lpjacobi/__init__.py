"""Finite-period, finite-time numerics for limit-periodic Jacobi operators."""
from .errors import (AliasingError, DegeneratePointError, DivisorChainError, EmptyWindowError,
                     LPJacobiError, NumericalError, PreconditionError, WindowOverflowError,
                     WindowTooSmallError)
from .operator_core import (LimitPeriodicFamily, PeriodicJacobi, WindowedState, build_ec_family,
                            family_from_json, family_to_json)
from .floquet import ThetaGrid, fiber_matrices, floquet_transform, inverse_floquet
from .spectral import band_curves, last_constant
from .badset import bad_set_measure

__version__ = "0.1.0"
