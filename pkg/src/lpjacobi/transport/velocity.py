"""The asymptotic velocity operator Q and the estimates that control it.

Fiberwise, ``Q(theta) = nu * sum_k slope_k(theta) P_k(theta)`` where
``slope_k`` is the theta-derivative of the k-th band and ``P_k`` the
eigenprojection.  With theta in [0, 1) the normalization ``nu = q / (2 pi)``
makes ``Q`` the group-velocity operator (``P_k A P_k = nu slope_k P_k``
with ``A = i[J, X]``); ``nu = q`` is kept available as the literal variant.

Norms of fiber-decomposed states are computed through Parseval on the theta
grid, so no real-space window is needed for non-local operators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from ..errors import DegeneratePointError, PreconditionError
from ..floquet import (FiberOperator, ThetaGrid, apply_fiberwise, eigh_fibers, fiber_derivatives,
                       fiber_matrices, floquet_transform, momentum_fibers)
from ..operator_core import (LimitPeriodicFamily, PeriodicJacobi, WindowedState,
                             apply_position, ec_gamma, r_bound)
from ..spectral import _is_degenerate, last_constant
from .dynamics import Evolver, heisenberg_position
from .schedule import Schedule

__all__ = [
    "NORMALIZATIONS",
    "QOperator",
    "build_q_operator",
    "time_averaged_A",
    "EstimateReport",
    "estimate_I_II_check",
    "PositionIdentityReport",
    "position_identity_check",
    "position_derivative_check",
    "QConvergenceRow",
    "q_convergence_experiment",
    "WitnessReport",
    "ballistic_witness",
    "KernelRow",
    "kernel_check",
]

NORMALIZATIONS = ("velocity", "paper")


def _nu(q: int, normalization: str) -> float:
    if normalization == "velocity":
        return q / (2.0 * math.pi)
    if normalization == "paper":
        return float(q)
    raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")


def _check_nodes(thetas) -> None:
    bad = [float(t) for t in np.atleast_1d(thetas) if _is_degenerate(float(t))]
    if bad:
        raise DegeneratePointError(
            f"velocity fibers are undefined at theta={bad[0]!r}; use a punctured ThetaGrid")


def _eigen_data(J: PeriodicJacobi, thetas):
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    w, v = eigh_fibers(fiber_matrices(J, th), th)
    d = fiber_derivatives(J, th)
    slopes = np.real(np.einsum("jik,jil,jlk->jk", v.conj(), d, v))
    return th, w, v, slopes


@dataclass(frozen=True)
class QOperator:
    """Fibers ``nu * V diag(slopes) V^*`` on a punctured grid."""

    J: PeriodicJacobi
    grid: ThetaGrid
    normalization: str
    nu: float
    eigenvalues: np.ndarray
    slopes: np.ndarray
    fibers: FiberOperator = field(repr=False)

    @property
    def velocities(self) -> np.ndarray:
        """Fiber eigenvalues ``nu * slope_k(theta)``."""
        return self.nu * self.slopes

    def apply_fibers(self, phi: WindowedState) -> np.ndarray:
        """``Q(theta) (F phi)(theta)`` as an ``(m, q)`` array."""
        g = floquet_transform(phi, self.J.q, self.grid)
        return self.fibers.act(g).values

    def norm_of(self, phi: WindowedState) -> float:
        """``||Q phi||`` via Parseval."""
        h = self.apply_fibers(phi)
        return math.sqrt(float(np.sum(self.grid.weights[:, None] * np.abs(h) ** 2)))

    def apply(self, phi: WindowedState, window: tuple[int, int]) -> WindowedState:
        """``Q phi`` restricted to ``window``; the grid must resolve the window."""
        return apply_fiberwise(self.fibers, phi, window)


def build_q_operator(J: PeriodicJacobi, grid: ThetaGrid | int = 1024,
                     normalization: str = "velocity") -> QOperator:
    if isinstance(grid, int):
        grid = ThetaGrid(grid, punctured=True)
    nu = _nu(J.q, normalization)
    th = grid.nodes
    _check_nodes(th)
    _, w, v, slopes = _eigen_data(J, th)
    mats = np.einsum("jik,jk,jlk->jil", v, nu * slopes, v.conj())
    mats = 0.5 * (mats + np.conj(np.swapaxes(mats, 1, 2)))
    return QOperator(J, grid, normalization, nu, w, slopes,
                     FiberOperator(grid, J.q, mats, True, None))


def _phase_average(x: np.ndarray) -> np.ndarray:
    # (e^{ix} - 1) / (ix) = e^{ix/2} sin(x/2) / (x/2), finite at x = 0
    return np.exp(0.5j * x) * np.sinc(x / (2.0 * np.pi))


def time_averaged_A(J: PeriodicJacobi, theta, t: float, basis: str = "site") -> np.ndarray:
    """``(1/t) int_0^t exp(isJ) A exp(-isJ) ds`` for the fiber(s) at ``theta``.

    In the eigenbasis of ``J(theta)`` entry ``(j, k)`` is ``A_jk g(t (l_j - l_k))``
    with ``g(x) = (e^{ix} - 1) / (ix)``; ``basis="site"`` rotates back.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    th, scalar = np.atleast_1d(np.asarray(theta, dtype=float)), np.ndim(theta) == 0
    w, v = eigh_fibers(fiber_matrices(J, th), th)
    A = momentum_fibers(J, th)
    Ae = np.einsum("jik,jil,jlm->jkm", v.conj(), A, v)
    out = Ae * _phase_average(t * (w[:, :, None] - w[:, None, :]))
    if basis == "site":
        out = np.einsum("jik,jkl,jml->jim", v, out, v.conj())
    elif basis != "eigen":
        raise ValueError("basis must be 'site' or 'eigen'")
    return out[0] if scalar else out


@dataclass(frozen=True)
class EstimateReport:
    """Hilbert-Schmidt distance between Q and the time-averaged A against a bound."""

    variant: str
    normalization: str
    t: float
    epsilon: float
    c1: float
    R: float
    lhs: float
    lhs_diagonal: float
    good_term: float
    bad_term: float
    gamma: float | None = None

    @property
    def rhs(self) -> float:
        return self.good_term + self.bad_term

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def ok(self) -> bool:
        return self.margin > 0


def estimate_I_II_check(J_n: PeriodicJacobi, J_prev: PeriodicJacobi | None, t: float,
                        epsilon: float, variant: str = "I", *, eta: float | None = None,
                        gamma: float | None = None, c1: float | None = None,
                        R: float | None = None, normalization: str = "paper",
                        m: int = 8192) -> EstimateReport:
    """Compare ``int ||Q(theta) - Abar(theta, t)||_HS^2`` with Estimate I or II.

    Estimate I: ``4 R^2 q^2 / (t eps)^2 + 64 R^2 exp(c1 q / 2) sqrt(eps)``.
    Estimate II: ``4 R^2 q^2 / (t eps)^2 + 16 R^2 q exp(c1 q_prev / 2) sqrt(eps)``,
    valid only when ``gamma_n < eps``; ``gamma_n`` is ``q^-3 exp(-eta q_prev)``
    unless given directly.  ``c1`` defaults to the empirical Last constant of
    the operators involved and ``R`` to the smallest admissible bound.
    """
    if variant not in ("I", "II"):
        raise ValueError("variant must be 'I' or 'II'")
    if t <= 0:
        raise ValueError("t must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    q = J_n.q
    ops = [J_n] if J_prev is None else [J_n, J_prev]
    if variant == "II":
        if J_prev is None:
            raise ValueError("Estimate II needs the previous stage")
        if gamma is None:
            if eta is None:
                raise ValueError("Estimate II needs eta or gamma")
            gamma = ec_gamma(eta, J_prev.q, q)
        if not gamma < epsilon:
            raise PreconditionError(
                f"Estimate II requires gamma_n < epsilon, got gamma_n={gamma!r}, epsilon={epsilon!r}")
    if c1 is None:
        c1 = max(last_constant(op).c1_emp for op in ops)
    if R is None:
        R = max(r_bound(op) for op in ops)

    grid = ThetaGrid(m, punctured=True)
    th = grid.nodes
    _, w, v, slopes = _eigen_data(J_n, th)
    A = momentum_fibers(J_n, th)
    Ae = np.einsum("jik,jil,jlm->jkm", v.conj(), A, v)
    Abar = Ae * _phase_average(t * (w[:, :, None] - w[:, None, :]))
    Y = -Abar
    idx = np.arange(q)
    Y[:, idx, idx] += _nu(q, normalization) * slopes
    hs = np.sum(np.abs(Y) ** 2, axis=(1, 2))
    diag = np.sum(np.abs(Y[:, idx, idx]) ** 2, axis=1)
    lhs = float(grid.integrate(hs))
    lhs_diag = float(grid.integrate(diag))

    good = 4.0 * R**2 * q**2 / (t * epsilon) ** 2 if epsilon > 0 else math.inf
    if variant == "I":
        bad = 64.0 * R**2 * math.exp(c1 * q / 2.0) * math.sqrt(epsilon)
    else:
        bad = 16.0 * R**2 * q * math.exp(c1 * J_prev.q / 2.0) * math.sqrt(epsilon)
    return EstimateReport(variant, normalization, float(t), float(epsilon), float(c1), float(R),
                          lhs, lhs_diag, good, bad, gamma)


def _window_momentum(J: PeriodicJacobi, lo: int, hi: int) -> np.ndarray:
    a = J.hopping(np.arange(lo, hi))
    return np.diag(1j * a, 1) + np.diag(-1j * a, -1)


@dataclass(frozen=True)
class PositionIdentityReport:
    t: float
    residual: float
    scale: float
    quad_error: float

    @property
    def ok(self) -> bool:
        return self.residual <= 1e-6 * self.scale


def position_identity_check(J: PeriodicJacobi, phi: WindowedState, t: float,
                            method: str = "fiber", epsabs: float = 1e-10) -> PositionIdentityReport:
    """Residual of ``X_J(t) phi = X phi + int_0^t exp(isJ) A exp(-isJ) phi ds``.

    The s-integral is adaptive (Gauss-Kronrod, vector valued); each integrand
    is one forward and one backward propagation on a light-cone window.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    xphi = apply_position(phi)
    scale = 1.0 + xphi.norm()
    if t == 0:
        return PositionIdentityReport(0.0, 0.0, scale, 0.0)
    ev = Evolver(J, phi, t, method=method)
    Aw = _window_momentum(J, ev.lo, ev.hi)
    v0 = np.asarray(ev.phi.values)

    def integrand(s):
        return ev.propagate(Aw @ ev.propagate(v0, s), -s)

    integral, err = integrate.quad_vec(integrand, 0.0, t, epsabs=epsabs, epsrel=1e-12,
                                       limit=2000)
    lhs = heisenberg_position(ev, t).values
    rhs = apply_position(ev.phi).values + integral
    return PositionIdentityReport(float(t), float(np.linalg.norm(lhs - rhs)), scale, float(err))


def position_derivative_check(J: PeriodicJacobi, phi: WindowedState, t: float,
                              h: float = 1e-4) -> float:
    """``|d/dt <psi, X psi> - <psi, A psi>|`` by central differences."""
    ev = Evolver(J, phi, t + h)
    sites = np.arange(ev.lo, ev.hi + 1)
    Aw = _window_momentum(J, ev.lo, ev.hi)
    v0 = np.asarray(ev.phi.values)

    def xmean(s):
        psi = ev.propagate(v0, s)
        return float(np.real(np.vdot(psi, sites * psi)))

    psi = ev.propagate(v0, t)
    deriv = (xmean(t + h) - xmean(t - h)) / (2 * h) if t >= h else (xmean(t + h) - xmean(t)) / h
    return abs(deriv - float(np.real(np.vdot(psi, Aw @ psi))))


def _parseval_norm(grid: ThetaGrid, vals: np.ndarray) -> float:
    return math.sqrt(float(np.sum(grid.weights[:, None] * np.abs(vals) ** 2)))


@dataclass(frozen=True)
class QConvergenceRow:
    n: int
    q_n: int
    q_next: int
    diff_norm: float
    paper_bound: float
    eligible: bool

    @property
    def ratio(self) -> float:
        return self.diff_norm / self.paper_bound

    @property
    def ok(self) -> bool:
        return self.diff_norm <= self.paper_bound


def q_convergence_experiment(fam: LimitPeriodicFamily, phi: WindowedState,
                             schedule: Schedule, stages=None, m: int = 8192,
                             normalization: str = "velocity",
                             R: float | None = None) -> list[QConvergenceRow]:
    """``||(Q_{q_n} - Q_{q_{n+1}}) phi||`` against the summable paper bound.

    Both operators are evaluated at the finer period (folding preserves Q)
    and the norm is taken through Parseval on a punctured grid of ``m`` nodes.
    A row is eligible when the schedule's stage ``n`` exists.
    """
    idx = list(range(len(fam.stages))) if stages is None else list(stages)
    if len(idx) < 2:
        raise ValueError("need at least two stages")
    if R is None:
        R = fam.R if fam.R is not None else max(r_bound(J) for J in fam.stages)
    grid = ThetaGrid(m, punctured=True)
    c1, eta, eta0 = schedule.c1, schedule.eta, schedule.eta0
    l1 = phi.l1_norm()
    rows = []
    for n, n1 in zip(idx, idx[1:]):
        fine = fam.stages[n1]
        Qf = build_q_operator(fine, grid, normalization)
        Qc = build_q_operator(fam.stages[n].as_period(fine.q), grid, normalization)
        g = floquet_transform(phi, fine.q, grid)
        diff = (Qc.fibers.matrices - Qf.fibers.matrices)
        diff_norm = _parseval_norm(grid, np.einsum("jkl,jl->jk", diff, g.values))
        qn = fam.stages[n].q
        bound = (8 * R * math.exp((c1 - eta0) * qn / 4)
                 + 2 * (R + 1) * math.exp((5 * eta0 - c1 - 4 * eta) * qn / 4)) * l1
        eligible = any(s.q_n == qn for s in schedule.stages)
        rows.append(QConvergenceRow(n, qn, fine.q, diff_norm, bound, eligible))
    return rows


@dataclass(frozen=True)
class KernelRow:
    n: int
    q_n: int
    c1: float
    norm: float
    lower: float

    @property
    def ok(self) -> bool:
        return self.norm >= self.lower


def kernel_check(fam: LimitPeriodicFamily, phi: WindowedState, m: int = 1024,
                 normalization: str = "velocity") -> list[KernelRow]:
    """``||Q_{q_n} phi|| >= exp(-c1 q_n)`` per stage, c1 the stage's empirical constant."""
    rows = []
    for n, J in enumerate(fam.stages):
        Q = build_q_operator(J, m, normalization)
        c1 = last_constant(J, m).c1_emp
        rows.append(KernelRow(n, J.q, c1, Q.norm_of(phi), math.exp(-c1 * J.q)))
    return rows


@dataclass(frozen=True)
class WitnessReport:
    times: np.ndarray
    residuals: np.ndarray
    kernel: list[KernelRow]
    normalization: str

    @property
    def decreasing_last_decade(self) -> bool:
        last = self.times >= self.times[-1] / 10.0
        r = self.residuals[last]
        return bool(r[-1] <= r[0] + 1e-12)


def ballistic_witness(fam: LimitPeriodicFamily, phi: WindowedState, times,
                      m: int | None = None, method: str = "fiber",
                      normalization: str = "velocity") -> WitnessReport:
    """``||(1/t) X_J(t) phi - Q phi||`` for the finest stage, plus the kernel check."""
    times = np.asarray(times, dtype=float)
    if np.any(times <= 0):
        raise ValueError("times must be positive")
    if not math.isclose(phi.norm(), 1.0, rel_tol=1e-12):
        raise ValueError("phi must be normalized")
    J = fam.stages[-1]
    ev = Evolver(J, phi, float(times.max()), method=method)
    need = (ev.hi - ev.lo + 1) // J.q + 2 * (max(abs(ev.phi.lo), abs(ev.phi.hi)) // J.q + 2)
    grid_m = max(m or 1024, 2 * need)
    Q = build_q_operator(J, grid_m, normalization)
    qphi = Q.apply(ev.phi, (ev.lo, ev.hi)).values
    res = np.array([np.linalg.norm(heisenberg_position(ev, t).values / t - qphi) for t in times])
    return WitnessReport(times, res, kernel_check(fam, phi, normalization=normalization),
                         normalization)
