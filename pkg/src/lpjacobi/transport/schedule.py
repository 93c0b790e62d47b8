"""Parameter schedule for the convergence argument along a divisor chain."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from ..errors import EmptyWindowError, PreconditionError
from ..operator_core import _check_divisor_chain

__all__ = ["StageSchedule", "Schedule", "eta0_window", "make_schedule"]


def eta0_window(c1: float, eta: float) -> tuple[float, float]:
    """Open interval ``(5 c1, (4 eta - 3 c1) / 5)``; empty unless ``eta > 7 c1``."""
    if not eta > 7.0 * c1:
        raise EmptyWindowError(
            f"eta0 window is empty: need eta > 7*c1, got eta={eta!r}, 7*c1={7.0 * c1!r}")
    return 5.0 * c1, (4.0 * eta - 3.0 * c1) / 5.0


@dataclass(frozen=True)
class StageSchedule:
    """Quantities attached to the pair ``(q_n, q_{n+1})``; logs avoid overflow."""

    n: int
    q_n: int
    q_next: int
    log_t: float
    log_eps: float
    log_eps_tilde: float
    log_gamma_next: float

    @property
    def t(self) -> float:
        return math.exp(self.log_t)

    @property
    def eps(self) -> float:
        return math.exp(self.log_eps)

    @property
    def eps_tilde(self) -> float:
        return math.exp(self.log_eps_tilde)

    @property
    def gamma_next(self) -> float:
        return math.exp(self.log_gamma_next)


@dataclass(frozen=True)
class Schedule:
    c1: float
    eta: float
    eta0: float
    window: tuple[float, float]
    stages: tuple[StageSchedule, ...]

    def validate(self) -> None:
        lo, hi = self.window
        if not (lo < self.eta0 < hi):
            raise PreconditionError(f"eta0={self.eta0!r} outside window ({lo!r}, {hi!r})")
        if not self.eta0 > 5.0 * self.c1:
            raise PreconditionError("eta0 must exceed 5*c1")
        for s in self.stages:
            if not s.log_gamma_next < s.log_eps_tilde:
                raise PreconditionError(
                    f"gamma_{s.n + 1} >= eps_tilde_{s.n} for q=({s.q_n}, {s.q_next})")


def make_schedule(c1: float, eta: float, q_schedule: Sequence[int],
                  eta0: float | None = None) -> Schedule:
    """``eps_n = q_n^-2 e^{-q_n eta0}``, ``eps~_n = q_{n+1}^-2 e^{-q_n eta0}``,
    ``t_n^2 = q_{n+1}^6 e^{(5 eta0 / 2 - c1 / 2) q_n}``; eta0 defaults to the window midpoint.
    """
    if c1 < 0:
        raise ValueError("c1 must be nonnegative")
    if eta <= 0:
        raise ValueError("eta must be positive")
    window = eta0_window(c1, eta)
    if eta0 is None:
        eta0 = 0.5 * (window[0] + window[1])
    q = [int(x) for x in q_schedule]
    _check_divisor_chain(q)
    stages = []
    for n in range(len(q) - 1):
        qn, qn1 = q[n], q[n + 1]
        log_t2 = 6.0 * math.log(qn1) + (2.5 * eta0 - 0.5 * c1) * qn
        stages.append(StageSchedule(
            n, qn, qn1,
            0.5 * log_t2,
            -2.0 * math.log(qn) - qn * eta0,
            -2.0 * math.log(qn1) - qn * eta0,
            -3.0 * math.log(qn1) - eta * qn,
        ))
    sched = Schedule(float(c1), float(eta), float(eta0), window, tuple(stages))
    sched.validate()
    return sched
