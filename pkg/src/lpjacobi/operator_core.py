"""Periodic and limit-periodic Jacobi operators on windows of the lattice.

A Jacobi operator acts on sequences indexed by the integers as

    (J phi)_n = a_{n-1} phi_{n-1} + b_n phi_n + a_n phi_{n+1}

and a q-periodic one is stored by a single period of coefficients
``a[0..q-1]`` and ``b[0..q-1]``; ``a[j]`` is the hopping between sites
``j`` and ``j + 1``.  States live on finite integer windows.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DivisorChainError, WindowOverflowError

__all__ = [
    "WindowedState",
    "PeriodicJacobi",
    "RBoundWitness",
    "LimitPeriodicFamily",
    "TelescopeTerm",
    "apply_operator",
    "apply_position",
    "apply_momentum",
    "coefficient_norm_bound",
    "r_bound",
    "certify_r_bound",
    "decompose_telescope",
    "build_ec_family",
    "ec_gamma",
    "qp_local_error",
    "torus_distance",
    "family_to_json",
    "family_from_json",
]


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class WindowedState:
    """Complex amplitudes on the integer window ``[lo, lo + len(values) - 1]``."""

    lo: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex, copy=True)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("values must be a non-empty 1-d array")
        vals.setflags(write=False)
        object.__setattr__(self, "lo", int(self.lo))
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, half_width: int) -> "WindowedState":
        return cls(-half_width, np.zeros(2 * half_width + 1, dtype=complex))

    @classmethod
    def delta(cls, site: int = 0, half_width: int = 2) -> "WindowedState":
        vals = np.zeros(2 * half_width + 1, dtype=complex)
        if abs(site) > half_width:
            raise WindowOverflowError(f"site {site} outside [-{half_width}, {half_width}]")
        vals[site + half_width] = 1.0
        return cls(-half_width, vals)

    @classmethod
    def from_support(cls, lo: int, amplitudes, half_width: int) -> "WindowedState":
        """Place ``amplitudes`` starting at site ``lo`` in ``[-half_width, half_width]``."""
        amplitudes = np.asarray(amplitudes, dtype=complex)
        hi = lo + amplitudes.size - 1
        if lo < -half_width or hi > half_width:
            raise WindowOverflowError(f"support [{lo}, {hi}] exceeds half width {half_width}")
        vals = np.zeros(2 * half_width + 1, dtype=complex)
        vals[lo + half_width : hi + half_width + 1] = amplitudes
        return cls(-half_width, vals)

    @property
    def hi(self) -> int:
        return self.lo + self.values.size - 1

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def support(self, atol: float = 0.0) -> tuple[int, int] | None:
        """Smallest and largest site with ``|amplitude| > atol``; None if empty."""
        nz = np.flatnonzero(np.abs(self.values) > atol)
        if nz.size == 0:
            return None
        return self.lo + int(nz[0]), self.lo + int(nz[-1])

    def support_radius(self) -> int:
        sup = self.support()
        if sup is None:
            return 0
        return max(abs(sup[0]), abs(sup[1]))

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def l1_norm(self) -> float:
        return float(np.sum(np.abs(self.values)))

    def at(self, site: int) -> complex:
        if site < self.lo or site > self.hi:
            return 0j
        return complex(self.values[site - self.lo])

    def restrict(self, lo: int, hi: int) -> "WindowedState":
        """Re-window to ``[lo, hi]``, zero-filling; raises if support is cut."""
        sup = self.support()
        if sup is not None and (sup[0] < lo or sup[1] > hi):
            raise WindowOverflowError(f"support {sup} does not fit in [{lo}, {hi}]")
        out = np.zeros(hi - lo + 1, dtype=complex)
        a, b = max(lo, self.lo), min(hi, self.hi)
        if a <= b:
            out[a - lo : b - lo + 1] = self.values[a - self.lo : b - self.lo + 1]
        return WindowedState(lo, out)

    def with_values(self, values) -> "WindowedState":
        return WindowedState(self.lo, values)


# ---------------------------------------------------------------------------
# operators


@dataclass(frozen=True)
class PeriodicJacobi:
    """One period of Jacobi coefficients.

    Coefficients are cyclic: site ``n`` uses ``a[n mod q]`` and ``b[n mod q]``.
    Zero hoppings are rejected unless ``allow_zero_hopping`` is set; that
    escape hatch exists only for decoupled-block control experiments.
    """

    a: np.ndarray
    b: np.ndarray
    allow_zero_hopping: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        a = np.array(self.a, dtype=float, copy=True).ravel()
        b = np.array(self.b, dtype=float, copy=True).ravel()
        if a.shape != b.shape:
            raise ValueError(f"a and b lengths differ: {a.size} != {b.size}")
        if a.size < 3:
            raise ValueError(f"period must be at least 3, got {a.size}")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("coefficients must be finite")
        if self.allow_zero_hopping:
            if np.any(a < 0):
                raise ValueError("hoppings must be nonnegative")
        elif np.any(a <= 0):
            raise ValueError("hoppings must be strictly positive")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def q(self) -> int:
        return int(self.a.size)

    @classmethod
    def free(cls, q: int) -> "PeriodicJacobi":
        return cls(np.ones(q), np.zeros(q))

    def repeat(self, times: int) -> "PeriodicJacobi":
        """The same operator viewed as ``times * q``-periodic."""
        return PeriodicJacobi(np.tile(self.a, times), np.tile(self.b, times),
                              allow_zero_hopping=self.allow_zero_hopping)

    def as_period(self, q: int) -> "PeriodicJacobi":
        if q % self.q:
            raise DivisorChainError(f"period {self.q} does not divide {q}")
        return self.repeat(q // self.q)

    def hopping(self, sites) -> np.ndarray:
        return self.a[np.mod(sites, self.q)]

    def potential(self, sites) -> np.ndarray:
        return self.b[np.mod(sites, self.q)]

    def window_matrix(self, lo: int, hi: int) -> np.ndarray:
        """Dense Dirichlet truncation to the sites ``lo..hi``."""
        sites = np.arange(lo, hi + 1)
        off = self.hopping(sites[:-1])
        return np.diag(self.potential(sites)) + np.diag(off, 1) + np.diag(off, -1)

    def __sub__(self, other: "PeriodicJacobi") -> tuple[np.ndarray, np.ndarray]:
        """Coefficient difference at the common (larger) period."""
        q = max(self.q, other.q)
        x, y = self.as_period(q), other.as_period(q)
        return x.a - y.a, x.b - y.b


def apply_operator(J: PeriodicJacobi, phi: WindowedState) -> WindowedState:
    """Apply ``J`` to a windowed state; the window must leave room for growth."""
    sup = phi.support()
    if sup is None:
        return phi.with_values(np.zeros_like(phi.values))
    if sup[0] - 1 < phi.lo or sup[1] + 1 > phi.hi:
        raise WindowOverflowError(
            f"support {sup} needs one padding site inside window [{phi.lo}, {phi.hi}]")
    v = phi.values
    n = phi.sites
    out = J.potential(n) * v
    out[1:] += J.hopping(n[:-1]) * v[:-1]
    out[:-1] += J.hopping(n[:-1]) * v[1:]
    return phi.with_values(out)


def apply_position(phi: WindowedState) -> WindowedState:
    return phi.with_values(phi.sites * phi.values)


def apply_momentum(J: PeriodicJacobi, phi: WindowedState) -> WindowedState:
    """Apply ``A = i[J, X]``: ``(A phi)_n = i (a_n phi_{n+1} - a_{n-1} phi_{n-1})``."""
    sup = phi.support()
    if sup is None:
        return phi.with_values(np.zeros_like(phi.values))
    if sup[0] - 1 < phi.lo or sup[1] + 1 > phi.hi:
        raise WindowOverflowError(
            f"support {sup} needs one padding site inside window [{phi.lo}, {phi.hi}]")
    v = phi.values
    hop = J.hopping(phi.sites[:-1])
    out = np.zeros_like(v)
    out[:-1] += 1j * hop * v[1:]
    out[1:] -= 1j * hop * v[:-1]
    return phi.with_values(out)


def coefficient_norm_bound(da, db) -> float:
    """Upper bound ``max|db| + 2 max|da|`` on the norm of a Jacobi difference."""
    da = np.asarray(da, dtype=float)
    db = np.asarray(db, dtype=float)
    if da.shape != db.shape:
        raise ValueError(f"length mismatch: {da.shape} vs {db.shape}")
    if da.size == 0:
        return 0.0
    return float(np.max(np.abs(db)) + 2.0 * np.max(np.abs(da)))


@dataclass(frozen=True)
class RBoundWitness:
    R: float


def r_bound(J: PeriodicJacobi) -> float:
    """Smallest R with ``1/R <= a_j <= R`` and ``|b_j| <= R``."""
    with np.errstate(divide="ignore"):
        inv_min = 1.0 / float(np.min(J.a)) if np.min(J.a) > 0 else math.inf
    return max(float(np.max(J.a)), inv_min, float(np.max(np.abs(J.b))))


def certify_r_bound(J: PeriodicJacobi, R: float) -> RBoundWitness:
    if R <= 0:
        raise ValueError("R must be positive")
    ok = (np.all(J.a >= 1.0 / R) and np.all(J.a <= R) and np.all(np.abs(J.b) <= R))
    if not ok:
        raise ValueError(f"operator is not {R}-bounded (smallest R is {r_bound(J)!r})")
    return RBoundWitness(float(R))


# ---------------------------------------------------------------------------
# limit-periodic families


def ec_gamma(eta: float, q_prev: int, q: int) -> float:
    """``exp(-eta q_prev) / q**3``, the per-stage decay allowance."""
    return math.exp(-eta * q_prev) / q ** 3


def _check_divisor_chain(periods: Sequence[int]) -> None:
    if len(periods) == 0:
        raise DivisorChainError("empty period schedule")
    if periods[0] < 3:
        raise DivisorChainError(f"first period must be >= 3, got {periods[0]}")
    for p, nxt in zip(periods, periods[1:]):
        if nxt <= p or nxt % p:
            raise DivisorChainError(f"{p} -> {nxt} is not a strict divisor step")


@dataclass(frozen=True)
class LimitPeriodicFamily:
    """Periodic approximants ``stages[n]`` with periods forming a divisor chain."""

    stages: tuple[PeriodicJacobi, ...]
    eta: float
    decay_coeff: float = 0.5
    R: float | None = None
    seed: int | None = None
    first_valid_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        _check_divisor_chain(self.periods)
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def periods(self) -> list[int]:
        return [s.q for s in self.stages]

    def gamma(self, n: int) -> float:
        """Decay allowance for the step into stage ``n`` (``n >= 1``)."""
        if n < 1 or n >= len(self.stages):
            raise IndexError(f"stage {n} has no predecessor")
        return ec_gamma(self.eta, self.stages[n - 1].q, self.stages[n].q)

    def gap_bound(self, n: int) -> float:
        """Certified norm bound of ``stages[n] - stages[n-1]``."""
        da, db = self.stages[n] - self.stages[n - 1]
        return coefficient_norm_bound(da, db)

    def ec_certificates(self) -> list[float]:
        """``q_{n+1}^3 e^{eta q_n} * gap_bound(n+1)`` for each step."""
        out = []
        for n in range(1, len(self.stages)):
            q_prev, q = self.stages[n - 1].q, self.stages[n].q
            out.append(q ** 3 * math.exp(self.eta * q_prev) * self.gap_bound(n))
        return out


@dataclass(frozen=True)
class TelescopeTerm:
    """One summand of ``stage_N = H_1 + ... + H_{N+1}``; ``H_1 = stage_0``."""

    k: int
    q: int
    da: np.ndarray
    db: np.ndarray
    norm_bound: float
    gamma: float | None


def decompose_telescope(fam: LimitPeriodicFamily) -> list[TelescopeTerm]:
    if len(fam.stages) < 2:
        raise ValueError("telescoping needs at least two stages")
    first = fam.stages[0]
    terms = [TelescopeTerm(1, first.q, first.a.copy(), first.b.copy(),
                           coefficient_norm_bound(first.a, first.b), None)]
    for n in range(1, len(fam.stages)):
        da, db = fam.stages[n] - fam.stages[n - 1]
        terms.append(TelescopeTerm(n + 1, fam.stages[n].q, da, db,
                                   coefficient_norm_bound(da, db), fam.gamma(n)))
    return terms


def telescope_partial_sum(terms: Sequence[TelescopeTerm], upto: int) -> tuple[np.ndarray, np.ndarray]:
    """Coefficientwise sum of ``terms[:upto]`` at the period of the last one."""
    q = terms[upto - 1].q
    a = np.zeros(q)
    b = np.zeros(q)
    for t in terms[:upto]:
        a += np.tile(t.da, q // t.q)
        b += np.tile(t.db, q // t.q)
    return a, b


_HEADROOM = 1.0 - 2.0 ** -10


def _perturb(rng, lo_hi, base, scale):
    lo, hi = lo_hi
    u = rng.uniform(-1.0, 1.0, base.size) * scale
    # reflect steps that would leave the admissible range, then clip
    flip = (base + u > hi) | (base + u < lo)
    u[flip] = -u[flip]
    return np.clip(base + u, lo, hi) - base


def build_ec_family(eta: float, q_schedule: Sequence[int], R: float = 2.0,
                    seed: int = 0, decay_coeff: float = 0.5) -> LimitPeriodicFamily:
    """Seeded random family whose stage gaps meet the exponential-class decay.

    Stage 0 draws ``a ~ U[1/R, R]`` and ``b ~ U[-R, R]``.  Each later stage
    tiles its predecessor and adds a perturbation with
    ``coefficient_norm_bound == decay_coeff * exp(-eta q_n) / q_{n+1}**3``
    (smaller only if clipping to the R-box removes part of it).
    """
    q_schedule = [int(q) for q in q_schedule]
    if eta <= 0:
        raise ValueError("eta must be positive")
    if R < 1:
        raise ValueError("R must be at least 1")
    if decay_coeff <= 0:
        raise ValueError("decay_coeff must be positive")
    _check_divisor_chain(q_schedule)
    rng = np.random.default_rng(seed)
    q0 = q_schedule[0]
    stages = [PeriodicJacobi(rng.uniform(1.0 / R, R, q0), rng.uniform(-R, R, q0))]
    for q_prev, q in zip(q_schedule, q_schedule[1:]):
        base = stages[-1].repeat(q // q_prev)
        target = decay_coeff * ec_gamma(eta, q_prev, q)
        da = _perturb(rng, (1.0 / R, R), base.a, target / 3.0)
        db = _perturb(rng, (-R, R), base.b, target / 3.0)
        size = coefficient_norm_bound(da, db)
        if size > 0:
            # use the full allowance (minus rounding headroom) when the box permits
            grow = _HEADROOM * target / size
            if grow > 1 and np.all((base.a + grow * da >= 1.0 / R) & (base.a + grow * da <= R)) \
                    and np.all(np.abs(base.b + grow * db) <= R):
                da, db = grow * da, grow * db
        new = PeriodicJacobi(base.a + da, base.b + db)
        while coefficient_norm_bound(*(new - base)) > target:
            da, db = 0.5 * da, 0.5 * db
            new = PeriodicJacobi(base.a + da, base.b + db)
        stages.append(new)
    return LimitPeriodicFamily(tuple(stages), float(eta), float(decay_coeff), float(R), int(seed))


# ---------------------------------------------------------------------------
# quasi-periodic comparison


def torus_distance(x: float) -> float:
    """``||x||_T``, the distance from ``x`` to the nearest integer."""
    return abs(x - round(x))


def qp_local_error(lip_v: float, omega: float, p_over_q, half_width: int) -> float:
    """Bound on the local gap between a quasi-periodic potential and its
    periodic approximant on ``[-half_width, half_width]``.

    Returns ``Lip(v) * (half_width / q) * |q omega - p|``; for continued
    fraction convergents ``|q omega - p| = ||q omega||_T``.
    """
    frac = p_over_q if isinstance(p_over_q, Fraction) else None
    if frac is None:
        p, q = p_over_q
        if q == 0:
            raise ZeroDivisionError("approximant denominator q is zero")
        p, q = int(p), int(q)
    else:
        p, q = frac.numerator, frac.denominator
    if half_width < 1:
        raise ValueError("half_width must be at least 1")
    if lip_v < 0:
        raise ValueError("Lipschitz constant must be nonnegative")
    if q < 0:
        p, q = -p, -q
    return float(lip_v) * (half_width / q) * abs(q * omega - p)


# ---------------------------------------------------------------------------
# serialization


def family_to_json(fam: LimitPeriodicFamily) -> str:
    doc = {
        "eta": fam.eta,
        "decay_coeff": fam.decay_coeff,
        "R": fam.R,
        "seed": fam.seed,
        "stages": [{"q": s.q, "a": [float(x) for x in s.a], "b": [float(x) for x in s.b]}
                   for s in fam.stages],
    }
    # json emits shortest round-trip float reprs, so reading back is bit-exact
    return json.dumps(doc, indent=1)


def family_from_json(text: str) -> LimitPeriodicFamily:
    doc = json.loads(text)
    stages = []
    for i, st in enumerate(doc["stages"]):
        if len(st["a"]) != st["q"] or len(st["b"]) != st["q"]:
            raise ValueError(f"stage {i}: coefficient length does not match q={st['q']}")
        stages.append(PeriodicJacobi(st["a"], st["b"]))
    return LimitPeriodicFamily(tuple(stages), float(doc["eta"]),
                               float(doc.get("decay_coeff", 0.5)),
                               doc.get("R"), doc.get("seed"))
