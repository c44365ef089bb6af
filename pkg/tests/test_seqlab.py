import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from spinopt.propagation import conjugate, evolve, rotation
from spinopt.seqlab import (
    RefocusSpec, ScheduleError, SpectrumPeak, ideal_evolution, ladder_demo,
    pauli_weight_histogram, probe_spectrum, refocus_schedule, schedule_propagator,
    transverse_expectation, zz_half_coupling,
)
from spinopt.spinsys import SpinSystem, pauli_matrix


def system(nu0, J, channel=None):
    n = len(nu0)
    channel = list(range(n)) if channel is None else channel
    return SpinSystem(nu0, J, channel, [1.0] * (max(channel) + 1), [np.inf] * n,
                      [np.inf] * n)


def fid(a, b):
    return float(np.vdot(a, b).real / (np.linalg.norm(a) * np.linalg.norm(b)))


def ugate(U, V):
    return abs(np.vdot(V, U)) / U.shape[0]


# ZZ ladder step

PAIR = system([12.0, -30.0], [[0, 40.0], [40.0, 0]])


def test_half_coupling_xi_to_yz():
    rho = evolve(PAIR, zz_half_coupling(PAIR, 0, 1), pauli_matrix("XI"))
    assert fid(rho, pauli_matrix("YZ")) > 0.999


def test_half_coupling_duration():
    p = zz_half_coupling(PAIR, 0, 1)
    assert p.duration == pytest.approx(1 / (2 * 40.0) * (1 + 2 / (p.M - 2)), rel=1e-12)
    assert not p.opt_mask.any()


def test_full_coupling_returns_minus_xi():
    rho = evolve(PAIR, zz_half_coupling(PAIR, 0, 1, duration_scale=2.0), pauli_matrix("XI"))
    assert fid(rho, -pauli_matrix("XI")) > 0.999


def test_spectator_refocused():
    sys_ = system([12.0, -30.0, 7.0], [[0, 40.0, 15.0], [40.0, 0, 9.0], [15.0, 9.0, 0]])
    pulse = zz_half_coupling(sys_, 0, 1)
    for spect in "IZ":
        rho = evolve(sys_, pulse, pauli_matrix("XI" + spect))
        assert fid(rho, pauli_matrix("YZ" + spect)) > 0.999


def test_half_coupling_errors():
    with pytest.raises(ValueError):
        zz_half_coupling(system([0.0, 0.0], np.zeros((2, 2))), 0, 1)
    shared = system([0.0, 0.0, 0.0], [[0, 40.0, 5.0], [40.0, 0, 0], [5.0, 0, 0]],
                    channel=[0, 1, 0])
    with pytest.raises(ValueError, match="refocus"):
        zz_half_coupling(shared, 0, 1)


# refocusing schedules

def test_single_spectator_centre_flip():
    sys_ = system([3.0, -4.0], [[0, 20.0], [20.0, 0]])
    res = refocus_schedule(sys_, RefocusSpec(0, (), 0.1, 2))
    assert res.flip_times == {1: [pytest.approx(0.05)]}
    assert res.achieved[(0, 1)] == pytest.approx(0.0)
    assert res.residual == 0.0


def test_full_partner_no_flips():
    sys_ = system([3.0, -4.0], [[0, 20.0], [20.0, 0]])
    res = refocus_schedule(sys_, RefocusSpec(0, ((1, 0.1),), 0.1, 4))
    assert res.flip_times == {1: []}
    assert res.achieved[(0, 1)] == pytest.approx(0.1)
    assert res.partner_error == pytest.approx(0.0)


def _fourspin(J12):
    J = np.array([[0, 30.0, 22.0, 11.0],
                  [30.0, 0, J12, 6.0],
                  [22.0, J12, 0, 8.0],
                  [11.0, 6.0, 8.0, 0]])
    return system([5.0, -9.0, 14.0, 2.0], J)


@pytest.mark.parametrize("J12", [0.0, 7.0])
def test_two_partners_brute_force(J12):
    sys_ = _fourspin(J12)
    T = 0.02
    res = refocus_schedule(sys_, RefocusSpec(0, ((1, T), (2, T / 2)), T, 8))
    assert res.partner_error <= T / 8
    U = schedule_propagator(sys_, res)
    # brute force equals the toggling-frame evolution with the achieved times
    assert ugate(U, ideal_evolution(sys_, res, requested=False)) > 1 - 1e-9
    if J12 == 0.0:
        assert res.residual == pytest.approx(0.0, abs=1e-15)
        assert ugate(U, ideal_evolution(sys_, res)) > 0.999


def test_infeasible_request_reports_residuals():
    sys_ = system([0.0, 0.0], [[0, 20.0], [20.0, 0]])
    with pytest.raises(ScheduleError) as exc:
        refocus_schedule(sys_, RefocusSpec(0, ((1, 0.2),), 0.1, 4))
    assert 1 in exc.value.residuals


def test_spec_validation():
    with pytest.raises(ValueError):
        RefocusSpec(0, ((0, 0.1),), 0.1, 4)
    with pytest.raises(ValueError):
        RefocusSpec(0, ((1, 0.1), (2, 0.1)), 0.1, 3)
    with pytest.raises(ValueError):
        RefocusSpec(0, (), 0.0, 4)


def _signs_from_flips(flips, grid, tau):
    s = np.ones(grid)
    for t in flips:
        s[int(round(t / tau)):] *= -1
    return s


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), grid=st.integers(4, 12))
def test_achieved_times_match_sign_integration(seed, grid):
    rng = np.random.default_rng(seed)
    n = 4
    J = np.triu(rng.choice([0.0, 10.0, 25.0], size=(n, n)), 1)
    J = J + J.T
    sys_ = system(rng.uniform(-20, 20, n).tolist(), J)
    T = 0.05
    partners = ((1, float(rng.uniform(-T, T))),)
    res = refocus_schedule(sys_, RefocusSpec(0, partners, T, grid))
    tau = T / grid
    signs = {k: _signs_from_flips(res.flip_times[k], grid, tau) for k in res.flip_times}
    for k, s in signs.items():
        assert np.array_equal(s, res.signs[k])
    signs[0] = np.ones(grid)
    for (a, b), t in res.achieved.items():
        assert t == tau * float(np.sum(signs[a] * signs[b]))


# Pauli weight

def test_weight_simple():
    assert pauli_weight_histogram(pauli_matrix("ZZZ")) == {3: 1.0}
    assert pauli_weight_histogram(pauli_matrix("ZI") + pauli_matrix("IZ")) == {1: 1.0}
    h = pauli_weight_histogram(pauli_matrix("XI") + 2 * pauli_matrix("YZ"))
    assert h == pytest.approx({1: 0.2, 2: 0.8})


def test_weight_zero_state():
    with pytest.raises(ValueError):
        pauli_weight_histogram(np.zeros((4, 4)))


def test_ladder_grows_weight_three():
    rho, steps = ladder_demo()
    h = pauli_weight_histogram(rho)
    assert max(h, key=h.get) == 3
    assert h[3] > 0.999
    # full simulation lands on +-ZZZ
    assert abs(fid(rho, pauli_matrix("ZZZ"))) > 0.999
    assert [pauli_weight_histogram(r).get(1, 0) for _, r in steps][:2] == [1.0, 1.0]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_weight_invariant_under_local_z(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    rho = oracles.random_traceless_hermitian(rng, n)
    out = rho
    for k in range(n):
        out = conjugate(rotation(n, k, "z", float(rng.uniform(0, 2 * np.pi))), out)
    a, b = pauli_weight_histogram(rho), pauli_weight_histogram(out)
    assert a.keys() == b.keys()
    assert all(abs(a[w] - b[w]) < 1e-9 for w in a)


# spectrum

def _pair(J, nu=0.0):
    return system([nu, 3.0], [[0, J], [J, 0]])


def test_antiphase_doublet():
    peaks = probe_spectrum(pauli_matrix("XZ"), 0, _pair(10.0))
    assert peaks == [SpectrumPeak(-5.0, 1.0), SpectrumPeak(5.0, -1.0)]


def test_inphase_doublet_and_merge():
    peaks = probe_spectrum(pauli_matrix("XI"), 0, _pair(10.0))
    assert peaks == [SpectrumPeak(-5.0, 1.0), SpectrumPeak(5.0, 1.0)]
    merged = probe_spectrum(pauli_matrix("XI"), 0, _pair(0.0))
    assert merged == [SpectrumPeak(0.0, 2.0)]


def test_offset_and_quadrature():
    peaks = probe_spectrum(pauli_matrix("YI"), 0, _pair(10.0, nu=7.0), quadrature="y")
    assert [p.frequency for p in peaks] == [2.0, 12.0]
    assert probe_spectrum(pauli_matrix("YI"), 0, _pair(10.0)) == []


def test_zzz_quartet_matches_expectations():
    sys_ = system([4.0, -6.0, 1.0], [[0, 30.0, 12.0], [30.0, 0, 5.0], [12.0, 5.0, 0]])
    rho = conjugate(rotation(3, 0, "y", np.pi / 2), pauli_matrix("ZZZ"))
    peaks = probe_spectrum(rho, 0, sys_)
    assert len(peaks) == 4
    proj = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    expected = {}
    for b1 in (0, 1):
        for b2 in (0, 1):
            op = oracles.kron_all([oracles.X, proj[b1], proj[b2]])
            f = 4.0 - (30.0 * (1 - 2 * b1) + 12.0 * (1 - 2 * b2)) / 2
            expected[f] = float(np.trace(rho @ op).real) / 4
    for p in peaks:
        assert p.amplitude == pytest.approx(expected[p.frequency], abs=1e-12)
    assert sorted(abs(p.amplitude) for p in peaks) == pytest.approx([0.5] * 4)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), quad=st.sampled_from(["x", "y"]))
def test_amplitudes_sum_to_transverse_expectation(seed, quad):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    J = np.triu(rng.uniform(-20, 20, (n, n)), 1)
    sys_ = system(rng.uniform(-10, 10, n).tolist(), J + J.T)
    rho = oracles.random_traceless_hermitian(rng, n)
    probe = int(rng.integers(n))
    total = sum(p.amplitude for p in probe_spectrum(rho, probe, sys_, quadrature=quad))
    assert total == pytest.approx(transverse_expectation(rho, probe, n, quad), abs=1e-9)


def test_probe_out_of_range():
    with pytest.raises(ValueError):
        probe_spectrum(pauli_matrix("XZ"), 2, _pair(10.0))
