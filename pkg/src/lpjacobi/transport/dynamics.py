"""Time evolution on finite windows with certified leakage bounds.

Two interchangeable propagators are provided: a fiberwise one (the
Floquet transform over a window of whole periods, i.e. the exact dynamics
on a ring of that length) and a truncated one (the Dirichlet restriction of
J to the window).  Both agree with the lattice dynamics up to paths that
reach the window edge.  That error is certified with the Chebyshev
expansion of ``exp(-itJ)``: writing the spectrum hull as ``[c - B, c + B]``,
the k-th Chebyshev term moves mass at most k sites and carries weight
``2 |J_k(B t)|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import WindowOverflowError, WindowTooSmallError
from ..floquet import ThetaGrid, eigh_fibers, fiber_matrices
from ..operator_core import PeriodicJacobi, WindowedState, apply_position

__all__ = [
    "EvolvedState",
    "MomentValue",
    "MomentSeries",
    "Evolver",
    "evolve",
    "moment",
    "transport_exponents",
    "spectral_hull",
    "chebyshev_tail",
    "light_cone_half_width",
]


def spectral_hull(J: PeriodicJacobi) -> tuple[float, float]:
    """Smallest interval containing the spectrum (band edges sit at theta 0 and 1/2)."""
    w = np.linalg.eigvalsh(fiber_matrices(J, [0.0, 0.5]))
    return float(w.min()), float(w.max())


def chebyshev_tail(x: float, dmax: int) -> np.ndarray:
    """``S[d] = sum_{k >= d} |J_k(x)|`` for ``d = 0..dmax``."""
    K = max(dmax, int(math.ceil(x))) + 64
    while True:
        terms = np.abs(special.jv(np.arange(K + 1), x))
        if terms[-1] < 1e-300 or K > 10 * (dmax + x + 64):
            break
        K *= 2
    tails = np.cumsum(terms[::-1])[::-1]
    out = np.zeros(dmax + 1)
    n = min(dmax + 1, tails.size)
    out[:n] = tails[:n]
    return out


def light_cone_half_width(J: PeriodicJacobi, radius: int, t: float, tau: float = 1e-12) -> int:
    """``radius + ceil(2 R t) + 8 + ceil(4 log(1/tau))``.

    Only the upper half of R-boundedness limits the speed, so ``R`` here is
    ``max(max a, max |b|)``; a vanishing hopping does not blow up the window.
    """
    R = max(float(np.max(J.a)), float(np.max(np.abs(J.b))), 1e-300)
    return int(radius + math.ceil(2.0 * R * t) + 8 + math.ceil(4.0 * math.log(1.0 / tau)))


@dataclass(frozen=True)
class EvolvedState:
    """``psi ~ exp(-itJ) phi`` on a window.

    ``tail_bound`` bounds the true mass outside the window; ``error_bound``
    bounds the l2 error of ``psi`` inside it.
    """

    t: float
    psi: WindowedState
    method: str
    tail_bound: float
    error_bound: float


class _FiberPropagator:
    """exp(-itJ) on a window of whole periods via per-fiber eigendecomposition."""

    def __init__(self, J: PeriodicJacobi, lo: int, hi: int):
        q = J.q
        count = (hi - lo + 1) // q
        assert lo % q == 0 and count * q == hi - lo + 1
        self.grid = ThetaGrid(count, punctured=True)
        th = self.grid.nodes
        self.w, self.v = eigh_fibers(fiber_matrices(J, th), th)
        p = lo // q + np.arange(count)
        self.fwd = np.exp(-2j * np.pi * np.outer(th, p))
        self.inv = np.exp(2j * np.pi * np.outer(p, th)) / count
        self.q, self.count = q, count

    def apply(self, values: np.ndarray, t: float) -> np.ndarray:
        g = self.fwd @ values.reshape(self.count, self.q)
        g = np.einsum("jkl,jl->jk", self.v.conj().transpose(0, 2, 1), g)
        g = np.exp(-1j * t * self.w) * g
        g = np.einsum("jkl,jl->jk", self.v, g)
        return (self.inv @ g).reshape(-1)


class _TruncatedPropagator:
    def __init__(self, J: PeriodicJacobi, lo: int, hi: int):
        self.w, self.v = np.linalg.eigh(J.window_matrix(lo, hi))

    def apply(self, values: np.ndarray, t: float) -> np.ndarray:
        return self.v @ (np.exp(-1j * t * self.w) * (self.v.T @ values))


class Evolver:
    """Reusable propagator for one operator and one initial state.

    The window is chosen by the light-cone rule for ``t_max`` and then widened
    until the certified leakage at ``t_max`` is below ``tau``.
    """

    def __init__(self, J: PeriodicJacobi, phi: WindowedState, t_max: float,
                 method: str = "fiber", tau: float = 1e-12, half_width: int | None = None,
                 max_grow: int = 30):
        if t_max < 0:
            raise ValueError("time must be nonnegative")
        if method not in ("fiber", "truncated"):
            raise ValueError(f"unknown method {method!r}")
        sup = phi.support()
        if sup is None:
            sup = (0, 0)
        self.J, self.method, self.tau = J, method, tau
        self.support = sup
        self.l1 = phi.l1_norm()
        lo_e, hi_e = spectral_hull(J)
        self.center, self.half = 0.5 * (lo_e + hi_e), max(0.5 * (hi_e - lo_e), 1e-300)
        L = half_width if half_width is not None else light_cone_half_width(
            J, max(abs(sup[0]), abs(sup[1])), t_max, tau)
        for _ in range(max_grow):
            lo, hi = self._window(L)
            if half_width is not None or self._leak(t_max, lo, hi) <= tau:
                break
            L = int(math.ceil(1.25 * L)) + J.q
        else:
            raise WindowOverflowError(f"could not certify leakage below {tau} at t={t_max}")
        self.lo, self.hi = lo, hi
        if sup[0] < lo or sup[1] > hi:
            raise WindowOverflowError(f"support {sup} outside window [{lo}, {hi}]")
        self.phi = phi.restrict(lo, hi)
        prop = _FiberPropagator if method == "fiber" else _TruncatedPropagator
        self._prop = prop(J, lo, hi)

    def _window(self, L: int) -> tuple[int, int]:
        if self.method == "truncated":
            return -L, L
        q = self.J.q
        lo = -((L + q - 1) // q) * q
        hi = ((L + q) // q) * q - 1
        return lo, hi

    def _bounds(self, t: float, lo: int, hi: int) -> tuple[float, float, np.ndarray]:
        D = min(self.support[0] - lo, hi - self.support[1])
        depth = D + 4 * int(math.ceil(self.half * t)) + 200
        S = chebyshev_tail(self.half * abs(t), depth)
        amp = np.minimum(1.0, 2.0 * self.l1 * S)
        # one site on each side at every distance d >= D + 1 from the support
        outside = amp[D + 1 :]
        tail = float(2.0 * np.sum(outside ** 2))
        err = float(4.0 * self.l1 * S[max(D, 0)])
        return tail, err, amp

    def _leak(self, t: float, lo: int, hi: int) -> float:
        tail, err, _ = self._bounds(t, lo, hi)
        return tail + err

    def evolve(self, t: float) -> EvolvedState:
        if t < 0:
            raise ValueError("time must be nonnegative")
        psi = self._prop.apply(np.asarray(self.phi.values), t)
        tail, err, _ = self._bounds(t, self.lo, self.hi)
        return EvolvedState(float(t), WindowedState(self.lo, psi), self.method, tail, err)

    def propagate(self, values: np.ndarray, t: float) -> np.ndarray:
        """``exp(-itJ)`` on raw window vectors, any sign of ``t``."""
        return self._prop.apply(values, t)

    def outside_moment_bound(self, t: float, p: float) -> float:
        """Bound on ``sum_{n outside} (|n|^p + 1) |psi_n|^2``."""
        D = min(self.support[0] - self.lo, self.hi - self.support[1])
        _, _, amp = self._bounds(t, self.lo, self.hi)
        d = np.arange(D + 1, amp.size)
        w_left = np.abs(self.support[0] - d) ** p + 1.0
        w_right = np.abs(self.support[1] + d) ** p + 1.0
        # tail beyond the tabulated depth is below double precision
        return float(np.sum((w_left + w_right) * amp[D + 1 :] ** 2))


def evolve(J: PeriodicJacobi, phi: WindowedState, t: float, method: str = "fiber",
           tau: float = 1e-12, half_width: int | None = None) -> EvolvedState:
    """Evolve ``phi`` by ``exp(-itJ)`` on a light-cone window."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    return Evolver(J, phi, t, method=method, tau=tau, half_width=half_width).evolve(t)


@dataclass(frozen=True)
class MomentValue:
    """``value <= |X|^p(t) <= value + tail`` up to ``slack`` from the in-window error."""

    value: float
    tail: float
    slack: float

    @property
    def interval(self) -> tuple[float, float]:
        return self.value - self.slack, self.value + self.slack + self.tail


def _moment_from(ev: Evolver, t: float, p: float, rtol: float) -> MomentValue:
    st = ev.evolve(t)
    n = st.psi.sites
    w = np.abs(n) ** p + 1.0
    vals = np.abs(st.psi.values) ** 2
    value = float(np.sum(w * vals))
    tail = ev.outside_moment_bound(t, p)
    e = st.error_bound
    slack = float(np.max(w) * e * (2.0 * math.sqrt(np.sum(vals)) + e))
    if tail + 2 * slack > rtol * value:
        raise WindowTooSmallError(
            f"moment leakage {tail + 2 * slack:.3g} exceeds {rtol:g} x {value:.6g} at t={t}")
    return MomentValue(value, tail, slack)


def moment(J: PeriodicJacobi, phi: WindowedState, t: float, p: float,
           method: str = "fiber", rtol: float = 1e-6) -> MomentValue:
    """``|X|^p_phi(t) = sum_n (|n|^p + 1) |<delta_n, exp(-itJ) phi>|^2``."""
    return _moment_from(Evolver(J, phi, t, method=method), t, p, rtol)


@dataclass(frozen=True)
class MomentSeries:
    """Moments along a time grid with running exponents.

    ``running_beta = log M(t) / (p log t)`` (nan for ``t <= 1``);
    ``fit_slope`` is the least-squares slope of ``log M`` against ``log t``
    over the final decade of times and ``fit_beta = fit_slope / p``.
    """

    p: float
    times: np.ndarray
    values: np.ndarray
    running_beta: np.ndarray
    fit_slope: float
    fit_beta: float

    @property
    def last_running_beta(self) -> float:
        return float(self.running_beta[-1])


def transport_exponents(J: PeriodicJacobi, phi: WindowedState, p: float, times,
                        method: str = "fiber") -> MomentSeries:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be an increasing 1-d grid")
    ev = Evolver(J, phi, float(times[-1]), method=method)
    vals = np.array([_moment_from(ev, float(t), p, 1e-6).value for t in times])
    with np.errstate(divide="ignore", invalid="ignore"):
        running = np.where(times > 1, np.log(vals) / (p * np.log(times)), np.nan)
    last = times >= times[-1] / 10.0
    if np.count_nonzero(last & (times > 0)) >= 2:
        x, y = np.log(times[last & (times > 0)]), np.log(vals[last & (times > 0)])
        slope = float(np.polyfit(x, y, 1)[0])
    else:
        slope = float("nan")
    return MomentSeries(float(p), times, vals, running, slope, slope / p)


def heisenberg_position(ev: Evolver, t: float) -> WindowedState:
    """``X_J(t) phi = exp(itJ) X exp(-itJ) phi`` on the evolver's window."""
    psi = ev.propagate(np.asarray(ev.phi.values), t)
    xpsi = apply_position(WindowedState(ev.lo, psi)).values
    return WindowedState(ev.lo, ev.propagate(np.asarray(xpsi), -t))
