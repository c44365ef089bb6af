import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from spinopt.spinsys import (
    PauliDecomposition, PauliString, SpinSystem, SpinSystemError, all_pauli_strings,
    check_qubit_cap, decompose_state, drift_hamiltonian, pauli_coefficients, pauli_matrix,
    rebuild_state, thermal_deviation_state,
)


def _sys(nu0, J=None, channel=None, gamma=None):
    n = len(nu0)
    J = np.zeros((n, n)) if J is None else J
    channel = [0] * n if channel is None else channel
    gamma = [1.0] * (max(channel) + 1) if gamma is None else gamma
    return SpinSystem(nu0, J, channel, gamma, np.inf, np.inf)


# pauli matrices

def test_pauli_z():
    assert np.allclose(pauli_matrix("Z"), np.diag([1, -1]))


def test_pauli_xz_is_projector_split():
    P0, P1 = np.diag([1, 0]), np.diag([0, 1])
    expected = np.kron(oracles.X, P0) - np.kron(oracles.X, P1)
    assert np.allclose(pauli_matrix("XZ"), expected)


def test_pauli_identity_scaled():
    m = pauli_matrix(PauliString("II", 3))
    assert np.allclose(m, 3 * np.eye(4))
    assert np.trace(m).real == pytest.approx(12)


def test_pauli_length_mismatch():
    with pytest.raises(ValueError):
        pauli_matrix("XZ", 3)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_pauli_orthogonality_exhaustive(n):
    labels = all_pauli_strings(n, include_identity=True)
    mats = np.array([pauli_matrix(p) for p in labels])
    gram = np.einsum("aij,bji->ab", mats, mats)
    assert np.allclose(gram, 2 ** n * np.eye(len(labels)), atol=1e-12)


def test_pauli_matches_explicit_kron():
    for ops in ["XYZ", "IZY", "YYI"]:
        assert np.allclose(pauli_matrix(ops), oracles.pauli(ops))


# parsing

def test_parse_weighted_terms():
    d = PauliDecomposition.parse("0.5*ZZ - XX + YY")
    assert [(t.ops, t.coeff) for t in d] == [("ZZ", 0.5), ("XX", -1.0), ("YY", 1.0)]
    assert d.n == 2 and d.G == 3


def test_parse_rejects_mixed_lengths_and_duplicates():
    with pytest.raises(ValueError):
        PauliDecomposition.parse("ZZ + X")
    with pytest.raises(ValueError):
        PauliDecomposition.parse("ZZ + ZZ")
    with pytest.raises(ValueError):
        PauliDecomposition.parse("ZQ")


# drift

def test_drift_single_shift():
    H = drift_hamiltonian(_sys([100.0]))
    assert np.allclose(H, np.diag([-100 * np.pi, 100 * np.pi]))


def test_drift_single_coupling():
    H = drift_hamiltonian(_sys([0.0, 0.0], [[0, 10], [10, 0]]))
    assert np.allclose(H, np.diag([5, -5, -5, 5]) * np.pi)


def test_drift_against_enumeration():
    J = [[0, 4], [4, 0]]
    H = drift_hamiltonian(_sys([50.0, -50.0], J))
    assert np.allclose(H, oracles.drift_by_enumeration([50.0, -50.0], J), atol=1e-12)


def test_drift_random_three_qubits(rng):
    nu0 = rng.uniform(-100, 100, 3)
    J = np.triu(rng.uniform(-30, 30, (3, 3)), 1)
    J = J + J.T
    H = drift_hamiltonian(_sys(nu0, J))
    assert np.allclose(H, oracles.drift_by_enumeration(nu0, J), atol=1e-10)


def test_drift_commutes_with_z_strings(rng):
    nu0 = rng.uniform(-100, 100, 3)
    J = np.triu(rng.uniform(-30, 30, (3, 3)), 1)
    H = drift_hamiltonian(_sys(nu0, J + J.T))
    for ops in itertools.product("IZ", repeat=3):
        P = pauli_matrix("".join(ops))
        assert np.allclose(H @ P, P @ H)


# thermal state

def test_thermal_single():
    assert np.allclose(thermal_deviation_state(_sys([0.0])), pauli_matrix("Z"))


def test_thermal_two_qubits():
    assert np.allclose(thermal_deviation_state(_sys([0.0, 1.0])), np.diag([2, 0, 0, -2]))


def test_thermal_channel_weights():
    rho = thermal_deviation_state(_sys([0.0, 0.0], channel=[0, 1], gamma=[1.0, 0.25]))
    assert np.allclose(rho, pauli_matrix("ZI") + 0.25 * pauli_matrix("IZ"))


# decomposition

def test_decompose_zz():
    d = decompose_state(pauli_matrix("ZZ"))
    assert [(t.ops, t.coeff) for t in d] == [("ZZ", 1.0)]


def test_decompose_zero():
    assert decompose_state(np.zeros((4, 4))).G == 0


def test_decompose_roundtrip_random(rng):
    rho = oracles.random_traceless_hermitian(rng, 3)
    back = rebuild_state(decompose_state(rho), 3)
    assert np.max(np.abs(back - rho)) < 1e-9


def test_coefficients_match_traces(rng):
    rho = oracles.random_traceless_hermitian(rng, 2)
    c = pauli_coefficients(rho)
    for idx in itertools.product(range(4), repeat=2):
        ops = "".join("IXYZ"[i] for i in idx)
        expected = np.trace(oracles.pauli(ops) @ rho) / 4
        assert c[idx] == pytest.approx(expected, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 3), seed=st.integers(0, 2 ** 31 - 1))
def test_roundtrip_property(n, seed):
    rho = oracles.random_traceless_hermitian(np.random.default_rng(seed), n)
    assert np.max(np.abs(rebuild_state(decompose_state(rho), n) - rho)) < 1e-9


# validation

def test_rejects_asymmetric_j():
    with pytest.raises(SpinSystemError, match=r"J\[0,1\]"):
        _sys([0.0, 0.0], [[0, 1], [2, 0]])


def test_rejects_nonzero_diagonal():
    with pytest.raises(SpinSystemError):
        _sys([0.0, 0.0], [[1, 0], [0, 0]])


def test_rejects_bad_channel():
    with pytest.raises(SpinSystemError):
        SpinSystem([0.0], [[0]], [1], [1.0], np.inf, np.inf)


def test_rejects_empty_channel():
    with pytest.raises(SpinSystemError):
        SpinSystem([0.0], [[0]], [0], [1.0, 1.0], np.inf, np.inf)


def test_qubit_cap():
    check_qubit_cap(10)
    with pytest.raises(ValueError, match="cap"):
        check_qubit_cap(11)
    with pytest.raises(ValueError):
        pauli_matrix("Z" * 11)
