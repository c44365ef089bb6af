"""Synthetic spin systems and pulse skeletons used by demos and tests.

None of these are measured molecules. The couplings are chosen to look like
a small heteronuclear register (one strongly coupled centre spin on its own
channel, the rest on a second channel) so the examples behave like the real
thing at desk scale.
"""

from __future__ import annotations

import numpy as np

from .device import DistortionModel, NoiseModel
from .propagation import ControlPulse
from .spinsys import SpinSystem

# flagship layout: centre qubit 0 on channel A, qubits 1..3 on channel B
FLAGSHIP_J = {(0, 1): 140.0, (0, 2): 148.8, (0, 3): 158.0,
              (1, 2): 2.0, (1, 3): 1.2, (2, 3): 3.1}
FLAGSHIP_NU0 = (12.0, -25.0, 18.0, 31.0)
FLAGSHIP_DT = 20e-6
FLAGSHIP_SUB = 10          # slices per sub-pulse
FLAGSHIP_FREE = 84         # slices per free evolution
FLAGSHIP_BMAX = 1.0e4     # rad/s


def _coupling_matrix(n: int, pairs: dict) -> np.ndarray:
    J = np.zeros((n, n))
    for (i, j), v in pairs.items():
        J[i, j] = J[j, i] = v
    return J


def flagship_system(T2: float | None = None) -> SpinSystem:
    """4 qubits, two channels; ``T2`` defaults to 20x the skeleton duration."""
    if T2 is None:
        T2 = 20 * flagship_duration()
    return SpinSystem(nu0=FLAGSHIP_NU0, J=_coupling_matrix(4, FLAGSHIP_J),
                      channel=[0, 1, 1, 1], gamma_weight=[1.0, 0.25], T2=[T2] * 4,
                      T1=[np.inf] * 4, channel_names=("A", "B"),
                      qubit_names=("a0", "b1", "b2", "b3"))


def flagship_duration() -> float:
    return (3 * FLAGSHIP_SUB + 2 * FLAGSHIP_FREE) * FLAGSHIP_DT


def _hard(n_slices: int, dt: float, angles: dict[int, tuple[float, int]], n_ch: int
          ) -> np.ndarray:
    """Rectangular pulses: channel -> (rotation angle, axis index 0=x 1=y)."""
    a = np.zeros((n_slices, n_ch, 2))
    for c, (angle, axis) in angles.items():
        a[:, c, axis] = angle / (2 * n_slices * dt)
    return a


def flagship_skeleton() -> ControlPulse:
    """Three optimisable sub-pulses separated by two frozen free evolutions.

    The starting amplitudes are the textbook hard-pulse sequence for
    ``Z I I I -> Z Z Z Z``: a y pi/2 on the centre, a refocusing pi on both
    channels halfway through the coupling evolution, and a closing -x pi/2.
    """
    dt, s, f = FLAGSHIP_DT, FLAGSHIP_SUB, FLAGSHIP_FREE
    parts = [
        (_hard(s, dt, {0: (np.pi / 2, 1)}, 2), True),
        (np.zeros((f, 2, 2)), False),
        (_hard(s, dt, {0: (np.pi, 0), 1: (np.pi, 0)}, 2), True),
        (np.zeros((f, 2, 2)), False),
        (_hard(s, dt, {0: (-np.pi / 2, 0)}, 2), True),
    ]
    amps = np.concatenate([p for p, _ in parts])
    mask = np.concatenate([np.full(len(p), m) for p, m in parts])
    return ControlPulse(amps, dt, mask, FLAGSHIP_BMAX, ("A", "B"))


def flagship_distortion() -> DistortionModel:
    return DistortionModel(amp_scale=0.95, amp_compress=0.05, b_ref=FLAGSHIP_BMAX)


def flagship_noise(seed: int = 7) -> NoiseModel:
    return NoiseModel(dephasing=True, readout_sigma=0.005, seed=seed)


def flagship_task() -> tuple[str, str]:
    return "ZIII", "ZZZZ"


def chain_system(n: int, J: float = 40.0, weak: dict | None = None, seed: int = 0,
                 T2: float = np.inf, n_channels: int = 1) -> SpinSystem:
    """Nearest-neighbour chain with reproducible random offsets.

    ``weak`` overrides individual couplings, e.g. ``{(2, 3): 0.2}`` for a
    weak link to cut.
    """
    rng = np.random.default_rng(seed)
    pairs = {(k, k + 1): J for k in range(n - 1)}
    pairs.update(weak or {})
    channel = [k % n_channels for k in range(n)]
    return SpinSystem(nu0=rng.uniform(-60, 60, n), J=_coupling_matrix(n, pairs),
                      channel=channel, gamma_weight=[1.0] * n_channels,
                      T2=[T2] * n, T1=[np.inf] * n)

