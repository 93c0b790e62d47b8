import math

import numpy as np
import pytest
from scipy import special

from lpjacobi.errors import WindowTooSmallError
from lpjacobi.operator_core import PeriodicJacobi, WindowedState
from lpjacobi.transport.dynamics import (Evolver, chebyshev_tail, evolve, moment, spectral_hull,
                                         transport_exponents)

from conftest import random_jacobi


def test_time_zero_is_identity(rng):
    phi = WindowedState.from_support(-2, rng.normal(size=5), 4)
    st = evolve(random_jacobi(rng, 4), phi, 0.0)
    expected = np.zeros(st.psi.values.size)
    expected[-4 - st.psi.lo: 5 - st.psi.lo] = phi.values.real
    np.testing.assert_allclose(st.psi.values, expected, atol=1e-13)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        evolve(PeriodicJacobi.free(4), WindowedState.delta(), -1.0)


def test_return_probability(frozen):
    st = evolve(PeriodicJacobi.free(4), WindowedState.delta(), 1.0)
    assert abs(st.psi.at(0)) ** 2 == pytest.approx(frozen["bessel_j0_2_squared"], abs=1e-12)


@pytest.mark.parametrize("method", ["fiber", "truncated"])
@pytest.mark.parametrize("t", [0.5, 3.0, 10.0])
def test_bessel_amplitudes(method, t):
    st = evolve(PeriodicJacobi.free(4), WindowedState.delta(), t, method=method)
    n = st.psi.sites
    ref = (-1j) ** np.mod(n, 4) * special.jv(n, 2 * t)
    assert np.max(np.abs(st.psi.values - ref)) <= 1e-8


@pytest.mark.parametrize("seed", range(3))
def test_unitarity_and_methods_agree(seed):
    rng = np.random.default_rng(seed)
    J = random_jacobi(rng, int(rng.integers(3, 7)))
    phi = WindowedState.from_support(-1, rng.normal(size=3) + 1j * rng.normal(size=3), 3)
    phi = phi.with_values(phi.values / phi.norm())
    a = evolve(J, phi, 4.0, method="fiber")
    b = evolve(J, phi, 4.0, method="truncated")
    assert abs(a.psi.norm() ** 2 - 1) <= 1e-10 + a.tail_bound
    lo, hi = max(a.psi.lo, b.psi.lo), min(a.psi.hi, b.psi.hi)
    diff = a.psi.values[lo - a.psi.lo: hi - a.psi.lo + 1] - b.psi.values[lo - b.psi.lo: hi - b.psi.lo + 1]
    assert np.max(np.abs(diff)) <= 1e-8


def test_chebyshev_tail_dominates_amplitude():
    S = chebyshev_tail(20.0, 80)
    n = np.arange(81)
    assert np.all(np.abs(special.jv(n, 20.0)) <= S + 1e-300)
    assert np.all(np.diff(S) <= 0)


def test_spectral_hull_free():
    assert spectral_hull(PeriodicJacobi.free(4)) == pytest.approx((-2.0, 2.0))


@pytest.mark.parametrize("p", [0, 1, 2])
def test_moment_at_time_zero(p):
    assert moment(PeriodicJacobi.free(4), WindowedState.delta(), 0.0, p).value == pytest.approx(
        1.0 if p else 2.0)


@pytest.mark.parametrize("p, key", [(2, "free_moment_p2_t10"), (4, "free_moment_p4_t10")])
def test_free_moment_oracle(frozen, p, key):
    m = moment(PeriodicJacobi.free(4), WindowedState.delta(), 10.0, p)
    assert m.value == pytest.approx(frozen[key], rel=1e-8)
    lo, hi = m.interval
    assert lo <= m.value <= hi


def test_free_second_moment_law():
    for t in (1.0, 7.5, 20.0):
        m = moment(PeriodicJacobi.free(5), WindowedState.delta(), t, 2)
        assert m.value == pytest.approx(2 * t * t + 1, rel=1e-10)


def test_window_too_small_is_reported():
    ev = Evolver(PeriodicJacobi.free(4), WindowedState.delta(), 1.0, half_width=8)
    from lpjacobi.transport.dynamics import _moment_from

    with pytest.raises(WindowTooSmallError):
        _moment_from(ev, 5.0, 2, 1e-6)


def test_moment_lower_bound(rng):
    J = random_jacobi(rng, 5)
    for t in (0.5, 2.0, 6.0):
        assert moment(J, WindowedState.delta(), t, 2).value >= 1.0 - 1e-12


def test_free_exponents():
    times = np.geomspace(2, 50, 25)
    s2 = transport_exponents(PeriodicJacobi.free(4), WindowedState.delta(), 2, times)
    s4 = transport_exponents(PeriodicJacobi.free(4), WindowedState.delta(), 4, times)
    # exact law 2t^2 + 1 gives the running value log(5001) / (2 log 50)
    assert s2.last_running_beta == pytest.approx(math.log(5001) / (2 * math.log(50)), rel=1e-10)
    assert abs(s2.fit_beta - 1) <= 0.03 and abs(s4.fit_beta - 1) <= 0.03
    assert np.all(s2.values >= 1.0)


def test_decoupled_block_is_stationary():
    a = np.array([1.0, 0.8, 1.1, 0.9, 0.0, 1.2])
    J = PeriodicJacobi(a, np.zeros(6), allow_zero_hopping=True)
    # bonds 4-5 and 10-11 are cut, so sites 5..10 form an invariant block
    _, v = np.linalg.eigh(J.window_matrix(5, 10))
    phi = WindowedState.from_support(5, v[:, 2], 12)
    times = np.geomspace(2, 200, 12)
    s = transport_exponents(J, phi, 2, times, method="truncated")
    assert np.ptp(s.values) <= 1e-8
    assert s.last_running_beta < 0.5 and abs(s.fit_slope) <= 1e-8


def test_times_must_increase():
    with pytest.raises(ValueError):
        transport_exponents(PeriodicJacobi.free(4), WindowedState.delta(), 2, [3.0, 2.0])
