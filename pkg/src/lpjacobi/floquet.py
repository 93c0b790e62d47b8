"""Floquet transform and fiber matrices of periodic Jacobi operators.

The transform of a lattice state is

    [F phi]_k(theta) = sum_p phi_{k + p q} exp(-2 pi i p theta),   0 <= k < q,

and under it a q-periodic Jacobi operator acts fiberwise by the q x q
matrix ``J(theta)``.  With this transform the top-right corner of
``J(theta)`` carries ``a_{q-1} exp(-2 pi i theta)`` and the bottom-left
corner its conjugate; ``CORNER_PHASE_SIGN`` records that choice.  The
opposite sign gives the unitarily equivalent fiber at ``-theta``.

Integrals over theta are replaced by the uniform rule on an equally spaced
grid, which is exact for trigonometric polynomials of degree below ``m``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import AliasingError, NumericalError
from .operator_core import PeriodicJacobi, WindowedState

__all__ = [
    "CORNER_PHASE_SIGN",
    "ThetaGrid",
    "FiberVectorField",
    "FloquetFiber",
    "FiberOperator",
    "fiber_matrix",
    "fiber_matrices",
    "fiber_derivatives",
    "momentum_fiber",
    "momentum_fibers",
    "eigh_fibers",
    "floquet_fiber",
    "floquet_transform",
    "inverse_floquet",
    "apply_fiberwise",
    "fiber_dump_rows",
    "FIBER_DUMP_COLUMNS",
]

CORNER_PHASE_SIGN = -1
"""Sign s in the top-right corner entry ``a_{q-1} exp(2 pi i s theta)``."""


@dataclass(frozen=True)
class ThetaGrid:
    """``m`` equally spaced quasimomenta in [0, 1) with equal weights.

    A punctured grid avoids the band-touching points 0 and 1/2: it is offset
    by half a cell when ``m`` is even (keeping the grid symmetric under
    ``theta -> 1 - theta``) and by a quarter cell when ``m`` is odd.
    """

    m: int
    punctured: bool = True

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("grid needs at least one node")

    @property
    def offset(self) -> float:
        if not self.punctured:
            return 0.0
        return 0.5 if self.m % 2 == 0 else 0.25

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.m) + self.offset) / self.m

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.m, 1.0 / self.m)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Quadrature of node values along the first axis (fixed summation order)."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True)
class FiberVectorField:
    """Values ``g[j, k] = g_k(theta_j)`` of a Floquet-transformed state."""

    grid: ThetaGrid
    q: int
    values: np.ndarray

    def norm_squared(self) -> float:
        return float(self.grid.integrate(np.sum(np.abs(self.values) ** 2, axis=1)))

    def inner(self, other: "FiberVectorField") -> complex:
        return complex(self.grid.integrate(np.sum(self.values.conj() * other.values, axis=1)))


def _as_thetas(theta) -> tuple[np.ndarray, bool]:
    th = np.asarray(theta, dtype=float)
    return np.atleast_1d(th), th.ndim == 0


def fiber_matrices(J: PeriodicJacobi, thetas) -> np.ndarray:
    """Stack of fiber matrices ``J(theta)`` with shape ``(len(thetas), q, q)``."""
    th, _ = _as_thetas(thetas)
    q = J.q
    base = np.diag(J.b).astype(complex)
    idx = np.arange(q - 1)
    base[idx, idx + 1] = J.a[:-1]
    base[idx + 1, idx] = J.a[:-1]
    out = np.broadcast_to(base, (th.size, q, q)).copy()
    phase = np.exp(2j * np.pi * CORNER_PHASE_SIGN * th)
    out[:, 0, q - 1] += J.a[-1] * phase
    out[:, q - 1, 0] += J.a[-1] * phase.conj()
    return out


def fiber_matrix(J: PeriodicJacobi, theta: float) -> np.ndarray:
    """The q x q Hermitian fiber ``J(theta)``."""
    return fiber_matrices(J, [theta])[0]


def fiber_derivatives(J: PeriodicJacobi, thetas) -> np.ndarray:
    """``d J(theta) / d theta``; only the two corners depend on theta."""
    th, _ = _as_thetas(thetas)
    q = J.q
    out = np.zeros((th.size, q, q), dtype=complex)
    phase = np.exp(2j * np.pi * CORNER_PHASE_SIGN * th)
    dphase = 2j * np.pi * CORNER_PHASE_SIGN * phase
    out[:, 0, q - 1] = J.a[-1] * dphase
    out[:, q - 1, 0] = J.a[-1] * dphase.conj()
    return out


def momentum_fibers(J: PeriodicJacobi, thetas) -> np.ndarray:
    """Fibers of ``A = i[J, X]``: ``i a_k`` above, ``-i a_k`` below the diagonal."""
    th, _ = _as_thetas(thetas)
    q = J.q
    base = np.zeros((q, q), dtype=complex)
    idx = np.arange(q - 1)
    base[idx, idx + 1] = 1j * J.a[:-1]
    base[idx + 1, idx] = -1j * J.a[:-1]
    out = np.broadcast_to(base, (th.size, q, q)).copy()
    phase = np.exp(2j * np.pi * CORNER_PHASE_SIGN * th)
    # the wraparound bond runs from site q-1 to site q = 0 of the next cell
    out[:, q - 1, 0] += 1j * J.a[-1] * phase.conj()
    out[:, 0, q - 1] += -1j * J.a[-1] * phase
    return out


def momentum_fiber(J: PeriodicJacobi, theta: float) -> np.ndarray:
    return momentum_fibers(J, [theta])[0]


def _fix_phases(vecs: np.ndarray) -> np.ndarray:
    """Rotate each eigenvector so its largest-modulus entry is real positive."""
    idx = np.argmax(np.abs(vecs), axis=-2)
    pivot = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    return vecs * (np.abs(pivot) / pivot)


def eigh_fibers(mats: np.ndarray, thetas=None, vectors: bool = True):
    """Batched Hermitian eigensolve; failures name the offending theta."""
    try:
        if not vectors:
            return np.linalg.eigvalsh(mats)
        w, v = np.linalg.eigh(mats)
    except np.linalg.LinAlgError:
        th = np.atleast_1d(thetas) if thetas is not None else np.arange(len(mats))
        for t, mat in zip(th, mats):
            try:
                np.linalg.eigvalsh(mat)
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"floquet: eigensolver failed at theta={t!r}") from exc
        raise
    return w, _fix_phases(v)


@dataclass(frozen=True)
class FloquetFiber:
    theta: float
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    slopes: np.ndarray


def floquet_fiber(J: PeriodicJacobi, theta: float) -> FloquetFiber:
    """Eigen-data of ``J(theta)`` with Hellmann-Feynman slopes."""
    mat = fiber_matrix(J, theta)
    w, v = eigh_fibers(mat[None], [theta])
    dmat = fiber_derivatives(J, [theta])[0]
    slopes = np.real(np.einsum("ik,ij,jk->k", v[0].conj(), dmat, v[0]))
    return FloquetFiber(float(theta), mat, w[0], v[0], slopes)


# ---------------------------------------------------------------------------
# transform


def _period_layout(lo: int, hi: int, q: int) -> tuple[int, int]:
    """First period index and period count covering sites ``lo..hi``."""
    p_lo, p_hi = lo // q, hi // q
    return p_lo, p_hi - p_lo + 1


def floquet_transform(phi: WindowedState, q: int, grid: ThetaGrid) -> FiberVectorField:
    """Exact transform of a finitely supported state sampled on ``grid``."""
    if q < 3:
        raise ValueError(f"period must be at least 3, got {q}")
    p_lo, count = _period_layout(phi.lo, phi.hi, q)
    block = np.zeros((count, q), dtype=complex)
    flat = block.reshape(-1)
    start = phi.lo - p_lo * q
    flat[start : start + phi.values.size] = phi.values
    p = p_lo + np.arange(count)
    phases = np.exp(-2j * np.pi * np.outer(grid.nodes, p))
    return FiberVectorField(grid, q, phases @ block)


def inverse_floquet(g: FiberVectorField, lo: int, hi: int) -> WindowedState:
    """Quadrature inverse on the window ``[lo, hi]``.

    Distinct periods are only distinguishable when the window spans at most
    ``m`` of them; otherwise :class:`AliasingError` is raised.
    """
    q, grid = g.q, g.grid
    p_lo, count = _period_layout(lo, hi, q)
    if count > grid.m:
        raise AliasingError(
            f"window [{lo}, {hi}] spans {count} periods of {q} but the grid has {grid.m} nodes")
    p = p_lo + np.arange(count)
    phases = np.exp(2j * np.pi * np.outer(p, grid.nodes)) * grid.weights
    block = phases @ g.values
    start = lo - p_lo * q
    return WindowedState(lo, block.reshape(-1)[start : start + hi - lo + 1])


@dataclass(frozen=True)
class FiberOperator:
    """A field of q x q matrices over a theta grid (a direct integral)."""

    grid: ThetaGrid
    q: int
    matrices: np.ndarray
    hermitian: bool = True
    reach: int | None = 1

    def __post_init__(self):
        if self.matrices.shape != (self.grid.m, self.q, self.q):
            raise ValueError(f"expected shape {(self.grid.m, self.q, self.q)}, "
                             f"got {self.matrices.shape}")

    @classmethod
    def jacobi(cls, J: PeriodicJacobi, grid: ThetaGrid) -> "FiberOperator":
        return cls(grid, J.q, fiber_matrices(J, grid.nodes), True, 1)

    @classmethod
    def momentum(cls, J: PeriodicJacobi, grid: ThetaGrid) -> "FiberOperator":
        return cls(grid, J.q, momentum_fibers(J, grid.nodes), True, 1)

    @classmethod
    def identity(cls, q: int, grid: ThetaGrid) -> "FiberOperator":
        return cls(grid, q, np.broadcast_to(np.eye(q, dtype=complex), (grid.m, q, q)).copy(),
                   True, 0)

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.matrices - np.conj(np.swapaxes(self.matrices, 1, 2)))))

    def act(self, g: FiberVectorField) -> FiberVectorField:
        if g.q != self.q or g.grid != self.grid:
            raise ValueError("fiber field and operator live on different grids")
        return FiberVectorField(self.grid, self.q, np.einsum("jkl,jl->jk", self.matrices, g.values))


def apply_fiberwise(op: FiberOperator, phi: WindowedState,
                    window: tuple[int, int] | None = None) -> WindowedState:
    """``F^{-1} [op(theta) (F phi)(theta)]`` on ``window`` (default: phi's).

    ``op.reach`` is the number of periods an operator can move mass (one for
    nearest-neighbor fibers, None for non-local ones such as velocity
    operators).  The grid must resolve the input window, the output window
    and that reach without wraparound.
    """
    lo, hi = window if window is not None else (phi.lo, phi.hi)
    q = op.q
    p_in, n_in = _period_layout(phi.lo, phi.hi, q)
    p_out, n_out = _period_layout(lo, hi, q)
    reach = op.reach if op.reach is not None else 0
    span = max(p_in + n_in, p_out + n_out) - min(p_in, p_out) + 2 * reach
    if span > op.grid.m:
        raise AliasingError(
            f"grid of {op.grid.m} nodes cannot resolve {span} periods of {q} "
            f"(input [{phi.lo}, {phi.hi}], output [{lo}, {hi}])")
    g = floquet_transform(phi, q, op.grid)
    return inverse_floquet(op.act(g), lo, hi)


FIBER_DUMP_COLUMNS = ("theta", "k", "lambda", "slope", "gap_to_next")


def fiber_dump_rows(J: PeriodicJacobi, grid: ThetaGrid) -> Iterable[tuple]:
    """Rows ``(theta, k, lambda, slope, gap_to_next)``; the top band's gap is nan."""
    th = grid.nodes
    w, v = eigh_fibers(fiber_matrices(J, th), th)
    d = fiber_derivatives(J, th)
    slopes = np.real(np.einsum("jik,jil,jlk->jk", v.conj(), d, v))
    for j, t in enumerate(th):
        for k in range(J.q):
            gap = w[j, k + 1] - w[j, k] if k + 1 < J.q else float("nan")
            yield float(t), k, float(w[j, k]), float(slopes[j, k]), float(gap)
