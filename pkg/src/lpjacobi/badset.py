"""Measure of the set of quasimomenta where two fiber eigenvalues are close.

``B(eps) = {theta : min_j (lambda_{j+1}(theta) - lambda_j(theta)) <= eps}``.
Ordering makes adjacent gaps sufficient.  The measure is located by a seed
grid, Lipschitz-guided refinement of cells that could hide a dip, and
vectorised bisection of each sign change of ``min_gap - eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError
from .floquet import ThetaGrid, eigh_fibers, fiber_matrices
from .operator_core import LimitPeriodicFamily, PeriodicJacobi
from .spectral import LastConstant, last_constant

__all__ = [
    "GapProfile",
    "gap_profile",
    "min_gaps",
    "BadSetEstimate",
    "bad_set_measure",
    "dense_bad_set_measure",
    "BoundReport",
    "check_lemma_2_5",
    "Theorem32Report",
    "check_theorem_3_2",
]

DEFAULT_SEED_M = 4096
DEFAULT_BOUNDARY_TOL = 1e-8


def min_gaps(J: PeriodicJacobi, thetas, chunk: int = 1 << 16) -> np.ndarray:
    """Smallest adjacent eigenvalue gap of ``J(theta)`` at each theta."""
    th = np.atleast_1d(np.asarray(thetas, dtype=float))
    out = np.empty(th.size)
    for s in range(0, th.size, chunk):
        part = th[s : s + chunk]
        w = eigh_fibers(fiber_matrices(J, part), part, vectors=False)
        out[s : s + chunk] = np.min(np.diff(w, axis=1), axis=1)
    return out


@dataclass(frozen=True)
class GapProfile:
    grid: ThetaGrid
    min_gap: np.ndarray
    arg_pair: np.ndarray


def gap_profile(J: PeriodicJacobi, grid: ThetaGrid) -> GapProfile:
    th = grid.nodes
    w = eigh_fibers(fiber_matrices(J, th), th, vectors=False)
    gaps = np.diff(w, axis=1)
    j = np.argmin(gaps, axis=1)
    return GapProfile(grid, gaps[np.arange(th.size), j], np.stack([j, j + 1], axis=1))


@dataclass(frozen=True)
class BadSetEstimate:
    epsilon: float
    measure: float
    intervals: tuple[tuple[float, float], ...]
    resolution: int
    overestimate: bool = False

    def contains(self, theta: float) -> bool:
        t = theta % 1.0
        return any(a <= t <= b for a, b in self.intervals)


def _gap_lipschitz(J: PeriodicJacobi) -> float:
    # |d lambda_k / d theta| <= ||J'(theta)|| = 2 pi a_{q-1}; a gap moves twice as fast
    return 4.0 * math.pi * float(J.a[-1])


def bad_set_measure(J: PeriodicJacobi, epsilon: float, m: int = DEFAULT_SEED_M,
                    tol: float = DEFAULT_BOUNDARY_TOL, max_depth: int = 40) -> BadSetEstimate:
    """Locate ``{theta : min_gap(theta) <= epsilon}`` as a union of intervals.

    Seed cells whose endpoint values cannot exclude a hidden dip (by the
    Lipschitz bound on the gap) are split until they can, or until they are
    narrower than ``tol``; unresolved cells are counted as bad and flagged
    through ``overestimate``.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    lip = _gap_lipschitz(J)

    def f(x):
        return min_gaps(J, x) - epsilon

    # cells [x0, x0 + h] with known endpoint values; wraps at 1
    h = 1.0 / m
    x0 = np.arange(m) * h
    f_nodes = f(x0)
    f0, f1 = f_nodes, np.roll(f_nodes, -1)
    widths = np.full(m, h)
    accepted = []  # (x0, width, f0, f1)
    overestimate = False
    for _ in range(max_depth):
        hidden = (f0 > 0) & (f1 > 0) & (f0 + f1 <= lip * widths)
        accepted.append((x0[~hidden], widths[~hidden], f0[~hidden], f1[~hidden]))
        if not hidden.any():
            x0 = np.empty(0)
            break
        x0, widths, f0, f1 = x0[hidden], widths[hidden] / 2, f0[hidden], f1[hidden]
        if widths[0] < tol:
            overestimate = True
            accepted.append((x0, 2 * widths, np.full(x0.size, -1.0), np.full(x0.size, -1.0)))
            x0 = np.empty(0)
            break
        fm = f(x0 + widths)
        x0 = np.concatenate([x0, x0 + widths])
        f0, f1 = np.concatenate([f0, fm]), np.concatenate([fm, f1])
        widths = np.concatenate([widths, widths])
    if x0.size:
        overestimate = True
        accepted.append((x0, widths, np.full(x0.size, -1.0), np.full(x0.size, -1.0)))

    x0 = np.concatenate([c[0] for c in accepted])
    widths = np.concatenate([c[1] for c in accepted])
    f0 = np.concatenate([c[2] for c in accepted])
    f1 = np.concatenate([c[3] for c in accepted])
    order = np.argsort(x0)
    x0, widths, f0, f1 = x0[order], widths[order], f0[order], f1[order]

    # bisect every sign change to the boundary tolerance
    change = (f0 <= 0) != (f1 <= 0)
    lo, hi = x0[change].copy(), (x0 + widths)[change].copy()
    left_bad = f0[change] <= 0
    while lo.size and np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        bad_mid = f(mid) <= 0
        move_lo = bad_mid == left_bad
        lo = np.where(move_lo, mid, lo)
        hi = np.where(move_lo, hi, mid)
    crossing = 0.5 * (lo + hi)

    pieces = []
    ci = 0
    for i in range(x0.size):
        a, b = x0[i], x0[i] + widths[i]
        if change[i]:
            c = crossing[ci]
            ci += 1
            pieces.append((a, c) if f0[i] <= 0 else (c, b))
        elif f0[i] <= 0:
            pieces.append((a, b))
    intervals = _merge(pieces, tol)
    measure = float(sum(b - a for a, b in intervals))
    return BadSetEstimate(float(epsilon), min(measure, 1.0), tuple(intervals), m, overestimate)


def _merge(pieces, tol):
    merged = []
    for a, b in sorted(pieces):
        b = min(b, 1.0)
        if merged and a <= merged[-1][1] + tol * 1e-3:
            merged[-1] = (merged[-1][0], max(merged[-1][1], b))
        else:
            merged.append((a, b))
    return [(float(a), float(b)) for a, b in merged]


def dense_bad_set_measure(J: PeriodicJacobi, epsilon: float, m: int = 1 << 20) -> float:
    """Brute-force fraction of ``m`` equally spaced nodes lying in the bad set."""
    th = np.arange(m) / m
    return float(np.count_nonzero(min_gaps(J, th) <= epsilon)) / m


@dataclass(frozen=True)
class BoundReport:
    epsilon: float
    measured: float
    bound: float

    @property
    def margin(self) -> float:
        return self.bound - self.measured

    @property
    def ok(self) -> bool:
        return self.margin > 0


def check_lemma_2_5(J: PeriodicJacobi, epsilon: float, c1: LastConstant | float | None = None,
                    m: int = DEFAULT_SEED_M) -> BoundReport:
    """Measured ``mes B(eps)`` against ``4 exp(c1 q / 2) sqrt(eps)``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if c1 is None:
        c1 = last_constant(J)
    c1_val = c1.c1_emp if isinstance(c1, LastConstant) else float(c1)
    est = bad_set_measure(J, epsilon, m=m)
    return BoundReport(float(epsilon), est.measure,
                       4.0 * math.exp(c1_val * J.q / 2.0) * math.sqrt(epsilon))


@dataclass(frozen=True)
class Theorem32Report(BoundReport):
    gamma: float = 0.0
    c1: float = 0.0
    containment_samples: int = 0
    containment_violations: int = 0

    @property
    def ok(self) -> bool:
        return self.margin > 0 and self.containment_violations == 0


def check_theorem_3_2(fam: LimitPeriodicFamily, n: int, epsilon: float,
                      c1: LastConstant | float | None = None, m: int = DEFAULT_SEED_M,
                      samples: int = 1 << 14) -> Theorem32Report:
    """Improved bad-set bound ``q_n exp(c1 q_{n-1} / 2) sqrt(eps)`` for stage ``n``.

    Also samples the inclusion of ``B(eps)`` for stage ``n`` in the bad set
    at ``eps + 2 gamma_n`` of stage ``n - 1`` viewed at period ``q_n``.
    """
    gamma = fam.gamma(n)
    if not gamma < epsilon:
        raise PreconditionError(f"need gamma_n < epsilon, got gamma_n={gamma!r} >= {epsilon!r}")
    J, coarse = fam.stages[n], fam.stages[n - 1]
    if c1 is None:
        c1 = last_constant(coarse)
    c1_val = c1.c1_emp if isinstance(c1, LastConstant) else float(c1)
    est = bad_set_measure(J, epsilon, m=m)
    bound = J.q * math.exp(c1_val * coarse.q / 2.0) * math.sqrt(epsilon)

    th = (np.arange(samples) + 0.5) / samples
    ends = np.array([x for iv in est.intervals for x in iv])
    th = np.concatenate([th, ends % 1.0])
    inside = min_gaps(J, th) <= epsilon
    folded = coarse.as_period(J.q)
    viol = int(np.count_nonzero(inside & ~(min_gaps(folded, th) <= epsilon + 2 * gamma)))
    return Theorem32Report(float(epsilon), est.measure, bound, gamma, c1_val,
                           int(np.count_nonzero(inside)), viol)
