import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from helpers import GRAD_DT, close_components, fd_gradient, random_instance, random_system
from spinopt.grape import (
    GrapeConfig, NumericalError, StateTransfer, analytic_gradient, fitness, gradient_ascent,
    grape_optimize,
)
from spinopt.propagation import ControlPulse
from spinopt.spinsys import SpinSystem, pauli_matrix


def _free1():
    return SpinSystem([0.0], [[0.0]], [0], [1.0], np.inf, np.inf)


def three_qubit_task():
    """Star-coupled register with a two-delay refocused skeleton for ZII -> ZZZ."""
    J = np.zeros((3, 3))
    J[0, 1] = J[1, 0] = 100.0
    J[0, 2] = J[2, 0] = 104.0
    J[1, 2] = J[2, 1] = 4.0
    sys_ = SpinSystem([8.0, -15.0, 22.0], J, [0, 1, 1], [1.0, 0.25], np.inf, np.inf)
    dt, s, f = 20e-6, 10, 121

    def hard(angles):
        a = np.zeros((s, 2, 2))
        for c, (ang, ax) in angles.items():
            a[:, c, ax] = ang / (2 * s * dt)
        return a

    parts = [(hard({0: (np.pi / 2, 1)}), True), (np.zeros((f, 2, 2)), False),
             (hard({0: (np.pi, 0), 1: (np.pi, 0)}), True), (np.zeros((f, 2, 2)), False),
             (hard({0: (-np.pi / 2, 0)}), True)]
    pulse = ControlPulse(np.concatenate([a for a, _ in parts]), dt,
                         np.concatenate([np.full(len(a), m) for a, m in parts]))
    return sys_, pulse, pauli_matrix("ZII"), pauli_matrix("ZZZ")


# fitness

def test_self_overlap():
    zz = pauli_matrix("ZZ")
    assert fitness(zz, zz) == pytest.approx(1.0)


def test_orthogonal():
    assert fitness(pauli_matrix("X"), pauli_matrix("Z")) == pytest.approx(0.0)


@pytest.mark.parametrize("theta", [0.0, 0.3, 1.2, 2.5, np.pi])
def test_rotated_overlap(theta):
    rho = np.cos(theta) * oracles.Z + np.sin(theta) * oracles.Y
    assert fitness(rho, oracles.Z) == pytest.approx(np.cos(theta), abs=1e-12)
    assert fitness(rho, oracles.Z) == pytest.approx(oracles.overlap(rho, oracles.Z))


def test_raw_overlap():
    assert fitness(2 * oracles.Z, oracles.Z, normalize=False) == pytest.approx(4.0)


def test_reference_norm_keeps_losses_visible():
    assert fitness(0.5 * oracles.Z, oracles.Z, rho_ref=oracles.Z) == pytest.approx(0.5)


def test_zero_state_rejected():
    with pytest.raises(ValueError):
        fitness(np.zeros((2, 2)), oracles.Z)


# gradient

def test_gradient_single_qubit_first_order():
    dt = 1e-3
    g = analytic_gradient(_free1(), ControlPulse.zeros(1, 1, dt), oracles.Z, oracles.Y,
                          normalize=False)
    assert g[0, 0, 0] == pytest.approx(-4 * dt)
    assert g[0, 0, 1] == pytest.approx(0.0, abs=1e-15)


def test_gradient_stationary():
    g = analytic_gradient(_free1(), ControlPulse.zeros(3, 1, 1e-3), oracles.Z, oracles.Z)
    assert np.all(g == 0)


def test_gradient_random_two_qubit(rng):
    sys_ = random_system(rng, 2)
    pulse = ControlPulse(rng.uniform(-300, 300, (5, sys_.n_channels, 2)), GRAD_DT)
    ri = oracles.random_traceless_hermitian(rng, 2)
    rf = oracles.random_traceless_hermitian(rng, 2)
    task = StateTransfer(sys_, ri, rf)
    g = task.gradient(pulse)
    assert close_components(g, fd_gradient(task.fitness, pulse)).all()


def test_gradient_frozen_slices_zero(rng):
    sys_ = random_system(rng, 2)
    pulse = ControlPulse(rng.uniform(-300, 300, (4, sys_.n_channels, 2)), GRAD_DT,
                         opt_mask=[True, False, True, False])
    g = analytic_gradient(sys_, pulse, pauli_matrix("ZI"), pauli_matrix("XY"))
    assert np.all(g[[1, 3]] == 0)


def test_gradient_restricted_qubits_matches_fd(rng):
    # a qubit left out of the gradient operators contributes nothing
    sys_ = SpinSystem([10.0, -20.0], [[0, 15], [15, 0]], [0, 0], [1.0], np.inf, np.inf)
    pulse = ControlPulse(rng.uniform(-200, 200, (3, 1, 2)), GRAD_DT)
    ri, rf = pauli_matrix("ZI"), pauli_matrix("YI")
    g0 = analytic_gradient(sys_, pulse, ri, rf, qubits=[0])
    g1 = analytic_gradient(sys_, pulse, ri, rf, qubits=[1])
    assert np.allclose(g0 + g1, analytic_gradient(sys_, pulse, ri, rf), atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_gradient_matches_fd_property(seed):
    sys_, pulse, ri, rf = random_instance(np.random.default_rng(seed))
    task = StateTransfer(sys_, ri, rf)
    assert close_components(task.gradient(pulse), fd_gradient(task.fitness, pulse)).all()


def test_gradient_error_shrinks_with_slice_width(rng):
    # first-order gradient: the error against finite differences falls with dt
    sys_ = random_system(rng, 2)
    amps = rng.uniform(-3000, 3000, (4, sys_.n_channels, 2))
    ri = oracles.random_traceless_hermitian(rng, 2)
    rf = oracles.random_traceless_hermitian(rng, 2)
    errs = []
    for dt in (1e-4, 1e-5, 1e-6):
        pulse = ControlPulse(amps, dt)
        task = StateTransfer(sys_, ri, rf)
        fd = fd_gradient(task.fitness, pulse)
        errs.append(np.max(np.abs(task.gradient(pulse) - fd)) / np.max(np.abs(fd)))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < errs[0] / 10


# optimisation

def test_already_at_target():
    pulse, rep = grape_optimize(_free1(), ControlPulse.zeros(4, 1, 1e-3), oracles.Z,
                                oracles.Z, GrapeConfig())
    assert len(rep.records) == 1 and rep.records[0].iteration == 0
    assert rep.final_fitness == pytest.approx(1.0)
    assert rep.stop_reason == "target"


def test_single_qubit_z_to_minus_y():
    cfg = GrapeConfig(epsilon=1e5, max_iters=200, target_fitness=0.9999)
    pulse0 = ControlPulse(np.full((10, 1, 2), 5.0), 1e-4)
    pulse, rep = grape_optimize(_free1(), pulse0, oracles.Z, -oracles.Y, cfg)
    assert rep.stop_reason == "target"
    assert rep.final_fitness >= 0.9999


def test_three_qubit_zii_to_zzz():
    sys_, pulse0, ri, rf = three_qubit_task()
    cfg = GrapeConfig(epsilon=1e9, max_iters=200, target_fitness=0.995)
    pulse, rep = grape_optimize(sys_, pulse0, ri, rf, cfg)
    assert rep.final_fitness >= 0.99
    assert StateTransfer(sys_, ri, rf).fitness(pulse) == pytest.approx(rep.final_fitness)


@pytest.mark.slow
def test_three_qubit_fd_driven_ascent_agrees():
    # the same ascent driven by finite differences instead of the analytic gradient
    sys_, pulse0, ri, rf = three_qubit_task()
    task = StateTransfer(sys_, ri, rf)
    cfg = GrapeConfig(epsilon=1e9, max_iters=30, target_fitness=0.995)

    def fd(p):
        opt = p.opt_slices

        def f_sub(sub):
            a = p.amps.copy()
            a[opt] = sub
            return task.fitness(p.with_amps(a))

        g = np.zeros_like(p.amps)
        g[opt] = oracles.central_difference(f_sub, p.amps[opt], np.full(p.amps[opt].shape, 1e-3))
        return g

    _, rep_fd = gradient_ascent(pulse0, task.fitness, fd, cfg)
    _, rep_an = grape_optimize(sys_, pulse0, ri, rf, cfg)
    assert rep_fd.final_fitness >= 0.99
    assert rep_fd.final_fitness == pytest.approx(rep_an.final_fitness, abs=5e-3)


def test_frozen_slices_untouched(rng):
    sys_ = random_system(rng, 2)
    amps = rng.uniform(-500, 500, (6, sys_.n_channels, 2))
    mask = [True, False, True, False, False, True]
    pulse0 = ControlPulse(amps, 1e-4, opt_mask=mask)
    pulse, _ = grape_optimize(sys_, pulse0, pauli_matrix("ZI"), pauli_matrix("XX"),
                              GrapeConfig(epsilon=1e6, max_iters=20))
    frozen = ~np.asarray(mask)
    assert np.array_equal(pulse.amps[frozen], amps[frozen])
    assert not np.array_equal(pulse.amps[~frozen], amps[~frozen])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_backtracking_monotone(seed):
    rng = np.random.default_rng(seed)
    sys_ = random_system(rng, 2)
    pulse0 = ControlPulse(rng.uniform(-500, 500, (6, sys_.n_channels, 2)), 1e-4)
    ri = oracles.random_traceless_hermitian(rng, 2)
    rf = oracles.random_traceless_hermitian(rng, 2)
    cfg = GrapeConfig(epsilon=1e7, max_iters=25, step_rule="backtracking", grow=1.5)
    _, rep = grape_optimize(sys_, pulse0, ri, rf, cfg)
    assert np.all(np.diff(rep.fitness_trace) >= 0)


def test_gauge_scaling_target_normalized(rng):
    sys_ = random_system(rng, 2)
    pulse0 = ControlPulse(rng.uniform(-500, 500, (6, sys_.n_channels, 2)), 1e-4)
    ri, rf = pauli_matrix("ZI"), pauli_matrix("ZZ") + 0.3 * pauli_matrix("XY")
    cfg = GrapeConfig(epsilon=1e6, max_iters=15, step_rule="fixed", plateau_tol=None)
    _, a = grape_optimize(sys_, pulse0, ri, rf, cfg)
    _, b = grape_optimize(sys_, pulse0, ri, 7.5 * rf, cfg)
    assert np.allclose(a.fitness_trace, b.fitness_trace, atol=1e-12)


def test_gauge_scaling_raw_mode(rng):
    sys_ = random_system(rng, 2)
    pulse0 = ControlPulse(rng.uniform(-500, 500, (6, sys_.n_channels, 2)), 1e-4)
    ri, rf = pauli_matrix("ZI"), pauli_matrix("XZ")
    c = 3.0
    base = GrapeConfig(epsilon=1e4, max_iters=15, step_rule="fixed", plateau_tol=None,
                       normalize=False)
    scaled = GrapeConfig(epsilon=1e4 / c ** 2, max_iters=15, step_rule="fixed",
                         plateau_tol=None, normalize=False)
    pa, a = grape_optimize(sys_, pulse0, ri, rf, base)
    pb, b = grape_optimize(sys_, pulse0, c * ri, c * rf, scaled)
    assert np.allclose(pa.amps, pb.amps, rtol=1e-9, atol=1e-9)
    assert np.argmax(a.fitness_trace) == np.argmax(b.fitness_trace)


def test_quadratic_rule_improves(rng):
    sys_, pulse0, ri, rf = three_qubit_task()
    cfg = GrapeConfig(epsilon=1e9, max_iters=10, step_rule="quadratic", target_fitness=1.0,
                      plateau_tol=None)
    _, rep = grape_optimize(sys_, pulse0, ri, rf, cfg)
    assert rep.final_fitness > rep.fitness_trace[0] + 0.5


def test_report_records_serialise():
    _, rep = grape_optimize(_free1(), ControlPulse(np.full((4, 1, 2), 5.0), 1e-4),
                            oracles.Z, -oracles.Y, GrapeConfig(epsilon=1e5, max_iters=3))
    lines = rep.to_lines()
    assert len(lines) == len(rep.records) + 1
    assert '"record": "summary"' in lines[-1]


def test_config_validation():
    with pytest.raises(ValueError):
        GrapeConfig(epsilon=0)
    with pytest.raises(ValueError):
        GrapeConfig(target_fitness=1.5)
    with pytest.raises(ValueError):
        GrapeConfig(step_rule="newton")
    with pytest.raises(ValueError):
        GrapeConfig(shrink=1.0)


def test_non_finite_fitness_raises():
    pulse = ControlPulse.zeros(2, 1, 1e-3)
    with pytest.raises(NumericalError):
        gradient_ascent(pulse, lambda p: float("nan"), lambda p: np.zeros_like(p.amps),
                        GrapeConfig())


def test_no_optimisable_slices():
    pulse = ControlPulse.zeros(2, 1, 1e-3, opt_mask=[False, False])
    with pytest.raises(ValueError):
        grape_optimize(_free1(), pulse, oracles.Z, oracles.X, GrapeConfig())
