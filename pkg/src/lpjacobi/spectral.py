"""Band curves, the discriminant, eigenvalue slopes and their lower bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePointError, DivisorChainError
from .floquet import (ThetaGrid, eigh_fibers, fiber_derivatives, fiber_matrices,
                      fiber_matrix)
from .operator_core import PeriodicJacobi, coefficient_norm_bound, torus_distance

__all__ = [
    "BandCurves",
    "band_curves",
    "hellmann_feynman_slopes",
    "discriminant",
    "discriminant_with_derivative",
    "Discriminant",
    "slope_via_discriminant",
    "LastConstant",
    "last_constant",
    "MinimaxReport",
    "minimax_check",
    "FoldingReport",
    "band_folding",
    "FoldedSlopeReport",
    "folded_slope_bound",
    "SIN_TORUS_CONSTANT",
]

SIN_TORUS_CONSTANT = 2.0
"""c with ``|sin(pi x)| >= c ||x||_T`` (2 is the sharp value)."""

_DEGENERATE_TOL = 1e-14


def _is_degenerate(theta: float) -> bool:
    frac = theta % 1.0
    return min(frac, abs(frac - 0.5), 1.0 - frac) < _DEGENERATE_TOL


def hellmann_feynman_slopes(J: PeriodicJacobi, thetas) -> tuple[np.ndarray, np.ndarray]:
    """Ordered eigenvalues and ``<phi_k, J'(theta) phi_k>`` at each theta."""
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    w, v = eigh_fibers(fiber_matrices(J, th), th)
    d = fiber_derivatives(J, th)
    slopes = np.real(np.einsum("jik,jil,jlk->jk", v.conj(), d, v))
    return w, slopes


@dataclass(frozen=True)
class BandCurves:
    """Ordered eigenvalues ``lam[j, k]`` and slopes ``slope[j, k]`` on a grid.

    Slopes at unpunctured nodes 0 and 1/2 are set to nan.
    """

    J: PeriodicJacobi
    grid: ThetaGrid
    lam: np.ndarray
    slope: np.ndarray

    def band_ranges(self) -> np.ndarray:
        return np.stack([self.lam.min(axis=0), self.lam.max(axis=0)], axis=1)

    def audit(self, tol: float = 1e-12) -> dict[str, int]:
        """Count ordering, overlap and interior-monotonicity violations."""
        ordering = int(np.sum(np.diff(self.lam, axis=1) < -tol))
        lo, hi = self.lam.min(axis=0), self.lam.max(axis=0)
        overlap = int(np.sum(hi[:-1] > lo[1:] + tol))
        th = self.grid.nodes
        monotone = 0
        for mask in ((th > 0) & (th < 0.5), (th > 0.5) & (th < 1.0)):
            seg = self.lam[mask]
            if len(seg) < 2:
                continue
            steps = np.diff(seg, axis=0)
            for k in range(seg.shape[1]):
                s = steps[:, k]
                up, down = np.sum(s < -tol), np.sum(s > tol)
                # a strictly monotone curve moves one way only
                monotone += int(min(up, down))
                monotone += int(np.sum(np.abs(s) <= tol))
        return {"ordering": ordering, "overlap": overlap, "monotonicity": monotone}


def band_curves(J: PeriodicJacobi, grid: ThetaGrid) -> BandCurves:
    th = grid.nodes
    lam, slope = hellmann_feynman_slopes(J, th)
    bad = np.array([_is_degenerate(t) for t in th])
    if bad.any():
        slope = slope.copy()
        slope[bad] = np.nan
    return BandCurves(J, grid, lam, slope)


# ---------------------------------------------------------------------------
# discriminant


def discriminant_with_derivative(J: PeriodicJacobi, lam) -> tuple[np.ndarray, np.ndarray]:
    """Trace of the one-period transfer matrix and its lambda-derivative.

    Uses the steps ``T_j = [[(lam - b_j)/a_j, -a_{j-1}/a_j], [1, 0]]`` with
    ``a_{-1} = a_{q-1}``.  The running product is renormalised each step
    and the scale is tracked as a base-2 exponent so large ``|lam|`` do not
    overflow until the final value itself is out of range.
    """
    lam = np.asarray(lam, dtype=float)
    x = np.atleast_1d(lam)
    n = x.size
    M = np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    dM = np.zeros((n, 2, 2))
    exponent = np.zeros(n)
    a, b = J.a, J.b
    for j in range(J.q):
        a_prev = a[j - 1]
        T = np.zeros((n, 2, 2))
        T[:, 0, 0] = (x - b[j]) / a[j]
        T[:, 0, 1] = -a_prev / a[j]
        T[:, 1, 0] = 1.0
        dT = np.zeros((n, 2, 2))
        dT[:, 0, 0] = 1.0 / a[j]
        dM = dT @ M + T @ dM
        M = T @ M
        scale = np.maximum(np.max(np.abs(M), axis=(1, 2)), np.max(np.abs(dM), axis=(1, 2)))
        _, e = np.frexp(np.where(scale > 0, scale, 1.0))
        M = np.ldexp(M, -e[:, None, None])
        dM = np.ldexp(dM, -e[:, None, None])
        exponent += e
    with np.errstate(over="raise"):
        try:
            tr = np.ldexp(M[:, 0, 0] + M[:, 1, 1], exponent.astype(int))
            dtr = np.ldexp(dM[:, 0, 0] + dM[:, 1, 1], exponent.astype(int))
        except FloatingPointError as exc:
            raise OverflowError("discriminant exceeds the float range") from exc
    if not (np.all(np.isfinite(tr)) and np.all(np.isfinite(dtr))):
        raise OverflowError("discriminant exceeds the float range")
    if lam.ndim == 0:
        return tr[0], dtr[0]
    return tr, dtr


def discriminant(J: PeriodicJacobi, lam):
    """``Delta(lam)``; eigenvalues of ``J(theta)`` solve ``Delta = 2 cos 2 pi theta``."""
    return discriminant_with_derivative(J, lam)[0]


@dataclass(frozen=True)
class Discriminant:
    """Callable view of ``Delta`` carrying the product of the hoppings."""

    J: PeriodicJacobi
    hopping_product: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "hopping_product", float(np.prod(self.J.a)))

    def __call__(self, lam):
        return discriminant(self.J, lam)

    def derivative(self, lam):
        return discriminant_with_derivative(self.J, lam)[1]

    def characteristic(self, lam, theta) -> complex:
        """``(prod a) (Delta(lam) - 2 cos 2 pi theta)``, equal to ``det(lam - J(theta))``."""
        return self.hopping_product * (self(lam) - 2.0 * math.cos(2 * math.pi * theta))


def slope_via_discriminant(J: PeriodicJacobi, theta: float, k: int) -> float:
    """``-4 pi sin(2 pi theta) / Delta'(lambda_k(theta))`` by implicit differentiation."""
    if _is_degenerate(theta):
        raise DegeneratePointError(f"slope undefined at degenerate theta={theta!r}")
    lam = np.linalg.eigvalsh(fiber_matrix(J, theta))[k]
    _, d = discriminant_with_derivative(J, lam)
    if abs(d) < 1e-12:
        raise DegeneratePointError(
            f"discriminant derivative {d!r} vanishes at theta={theta!r}, band {k}")
    return float(-4.0 * math.pi * math.sin(2 * math.pi * theta) / d)


# ---------------------------------------------------------------------------
# Last-type slope bound


@dataclass(frozen=True)
class LastConstant:
    """Smallest ``c`` with ``|slope| >= exp(-c q) |sin 2 pi theta|`` on a grid."""

    c1_emp: float
    m: int
    theta: float
    k: int
    violations: tuple = ()

    def audit(self, bands: BandCurves, rtol: float = 1e-12) -> int:
        q = bands.J.q
        th = bands.grid.nodes[:, None]
        rhs = math.exp(-self.c1_emp * q) * np.abs(np.sin(2 * np.pi * th))
        ok = np.abs(bands.slope) >= rhs * (1.0 - rtol)
        return int(np.sum(~ok & np.isfinite(bands.slope)))


def last_constant(J: PeriodicJacobi, grid: ThetaGrid | int = 1024) -> LastConstant:
    """``max (1/q) log(|sin 2 pi theta| / |slope|)`` over grid and bands, clamped at 0.

    A slope that vanishes at an interior node is reported in ``violations``
    and skipped.
    """
    if isinstance(grid, int):
        grid = ThetaGrid(grid, punctured=True)
    bands = band_curves(J, grid)
    s = np.abs(np.sin(2 * np.pi * grid.nodes))[:, None]
    slope = np.abs(bands.slope)
    finite = np.isfinite(slope)
    zero = finite & (slope == 0.0)
    violations = tuple((float(grid.nodes[j]), int(k)) for j, k in zip(*np.nonzero(zero)))
    use = finite & ~zero & (s > 0)
    ratio = np.full(slope.shape, -np.inf)
    ratio[use] = np.log(np.broadcast_to(s, slope.shape)[use] / slope[use]) / J.q
    j, k = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    c1 = max(float(ratio[j, k]), 0.0)
    return LastConstant(c1, grid.m, float(grid.nodes[j]), int(k), violations)


# ---------------------------------------------------------------------------
# perturbation and folding


@dataclass(frozen=True)
class MinimaxReport:
    theta: float
    displacements: np.ndarray
    fiber_norm: float
    coefficient_bound: float

    @property
    def max_displacement(self) -> float:
        return float(np.max(self.displacements))

    @property
    def margin(self) -> float:
        return self.fiber_norm - self.max_displacement

    @property
    def ok(self) -> bool:
        tol = 1e-13 * (1.0 + self.fiber_norm)
        return (self.max_displacement <= self.fiber_norm + tol
                and self.fiber_norm <= self.coefficient_bound + tol)


def _common_period(J1: PeriodicJacobi, J2: PeriodicJacobi) -> tuple[PeriodicJacobi, PeriodicJacobi]:
    q = max(J1.q, J2.q)
    if q % J1.q or q % J2.q:
        raise DivisorChainError(f"periods {J1.q} and {J2.q} are not nested")
    return J1.as_period(q), J2.as_period(q)


def minimax_check(J1: PeriodicJacobi, J2: PeriodicJacobi, theta: float) -> MinimaxReport:
    """Ordered-eigenvalue displacement against the fiber-difference norm."""
    A, B = _common_period(J1, J2)
    F1, F2 = fiber_matrix(A, theta), fiber_matrix(B, theta)
    disp = np.abs(np.linalg.eigvalsh(F1) - np.linalg.eigvalsh(F2))
    fnorm = float(np.linalg.norm(F1 - F2, 2))
    return MinimaxReport(float(theta), disp, fnorm, coefficient_norm_bound(A.a - B.a, A.b - B.b))


@dataclass(frozen=True)
class FoldingReport:
    theta: float
    fine: np.ndarray
    folded: np.ndarray

    @property
    def distance(self) -> float:
        """Largest gap between matched sorted entries (bounds the Hausdorff distance)."""
        return float(np.max(np.abs(self.fine - self.folded)))

    @property
    def hausdorff(self) -> float:
        d = np.abs(self.fine[:, None] - self.folded[None, :])
        return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def _folding_factor(J_coarse: PeriodicJacobi, q_fine: int) -> int:
    if q_fine % J_coarse.q:
        raise DivisorChainError(f"{J_coarse.q} does not divide {q_fine}")
    return q_fine // J_coarse.q


def band_folding(J_coarse: PeriodicJacobi, q_fine: int, theta: float) -> FoldingReport:
    """Compare the coarse operator's fine-period fiber with its folded coarse fibers."""
    ell = _folding_factor(J_coarse, q_fine)
    fine = np.linalg.eigvalsh(fiber_matrix(J_coarse.repeat(ell), theta))
    shifted = (theta + np.arange(ell)) / ell
    folded = np.sort(np.linalg.eigvalsh(fiber_matrices(J_coarse, shifted)).ravel())
    return FoldingReport(float(theta), fine, folded)


@dataclass(frozen=True)
class FoldedSlopeReport:
    theta: float
    min_slope: float
    bound: float
    c1: float
    ell: int

    @property
    def margin(self) -> float:
        return self.min_slope - self.bound

    @property
    def ok(self) -> bool:
        return self.margin >= 0


def folded_slope_bound(J_coarse: PeriodicJacobi, q_fine: int, theta: float,
                       c1: LastConstant | float | None = None) -> FoldedSlopeReport:
    """Smallest folded-band slope at ``theta`` against
    ``(c / ell**2) exp(-c1 q_coarse) ||2 theta||_T``."""
    if _is_degenerate(theta):
        raise DegeneratePointError(f"slope undefined at degenerate theta={theta!r}")
    ell = _folding_factor(J_coarse, q_fine)
    if c1 is None:
        c1 = last_constant(J_coarse)
    c1_val = c1.c1_emp if isinstance(c1, LastConstant) else float(c1)
    _, slopes = hellmann_feynman_slopes(J_coarse.repeat(ell), [theta])
    rhs = (SIN_TORUS_CONSTANT / ell ** 2) * math.exp(-c1_val * J_coarse.q) \
        * torus_distance(2.0 * theta)
    return FoldedSlopeReport(float(theta), float(np.min(np.abs(slopes))), rhs, c1_val, ell)
