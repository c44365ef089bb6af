"""Random instances and comparison helpers shared by the tests."""

import numpy as np

from spinopt.propagation import ControlPulse
from spinopt.spinsys import SpinSystem

import oracles

# criterion number -> PASS/FAIL line, echoed in the terminal summary
ACCEPTANCE: dict[int, str] = {}

# Slices short enough that the first-order gradient is accurate at amplitudes
# up to a few hundred rad/s.
GRAD_DT = 1e-6


def random_system(rng, n: int, n_channels: int | None = None, T2=np.inf) -> SpinSystem:
    if n_channels is None:
        n_channels = 1 if n == 1 else int(rng.integers(1, 3))
    ch = rng.integers(0, n_channels, size=n)
    ch[:n_channels] = np.arange(n_channels)
    J = np.triu(rng.uniform(-20, 20, (n, n)), 1)
    return SpinSystem(nu0=rng.uniform(-50, 50, n), J=J + J.T, channel=ch,
                      gamma_weight=np.ones(n_channels), T2=np.broadcast_to(T2, (n,)),
                      T1=[np.inf] * n)


def random_instance(rng, dt: float = GRAD_DT):
    """(system, pulse, rho_i, rho_f) with n in 1..3 and M in 1..8."""
    n = int(rng.integers(1, 4))
    M = int(rng.integers(1, 9))
    sys_ = random_system(rng, n)
    pulse = ControlPulse(rng.uniform(-300, 300, (M, sys_.n_channels, 2)), dt)
    rho_i = oracles.random_traceless_hermitian(rng, n)
    rho_f = oracles.random_traceless_hermitian(rng, n)
    return sys_, pulse, rho_i, rho_f


def fd_gradient(fit, pulse: ControlPulse) -> np.ndarray:
    """Central differences with step 1e-6 * max(1, |B|)."""
    h = 1e-6 * np.maximum(1.0, np.abs(pulse.amps))
    return oracles.central_difference(lambda a: fit(pulse.with_amps(a)), pulse.amps, h)


def close_components(a: np.ndarray, b: np.ndarray, rel: float = 1e-3, atol: float = 1e-9
                     ) -> np.ndarray:
    err = np.abs(a - b)
    return (err <= rel * np.abs(b)) | (err <= atol)

