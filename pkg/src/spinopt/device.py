"""Virtual noisy processor.

A device runs *experiments*: a pulse applied to an input state, optionally
with an instantaneous local +-pi/2 rotation inserted after one slice, ending
in the measurement of a Pauli observable. Callers only get expectation
values back. The true Hamiltonian, the amplitude distortion and the noise
settings are captured inside :func:`make_device` and are not reachable
through the returned handle.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .propagation import ControlPulse, SliceCache, conjugate, rotation
from .spinsys import (PauliDecomposition, SpinSystem, check_state, pauli_matrix,
                      z_signs)

CACHE_BYTES = 256 * 2 ** 20   # per virtual device


@dataclass(frozen=True)
class NoiseModel:
    """Stochastic and incoherent error sources.

    ``readout_sigma`` adds Gaussian noise to every returned expectation;
    ``shots`` instead samples each Pauli term binomially. Setting both is
    rejected. ``readout_gain`` scales returned values (signal loss in the
    readout chain).
    """

    dephasing: bool = True
    rotation_error: float = 0.0
    readout_sigma: float = 0.0
    shots: int | None = None
    seed: int = 0
    readout_gain: float = 1.0

    def __post_init__(self):
        if self.readout_sigma < 0:
            raise ValueError("readout_sigma must be >= 0")
        if self.shots is not None and self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.shots is not None and self.readout_sigma > 0:
            raise ValueError("use either readout_sigma or shots, not both")


@dataclass(frozen=True)
class DistortionModel:
    """Hidden deviations of the real hardware from the nominal model.

    Applied amplitudes become ``s * B * (1 - c (|B| / b_ref)^2)`` per channel,
    with ``b_ref`` defaulting to the pulse's ``b_max``. Frequencies shift by
    ``freq_offset`` (Hz) and every coupling is multiplied by ``j_scale``.
    """

    amp_scale: float | Sequence[float] = 1.0
    amp_compress: float | Sequence[float] = 0.0
    b_ref: float | None = None
    freq_offset: float | Sequence[float] = 0.0
    j_scale: float = 1.0

    def true_system(self, nominal: SpinSystem) -> SpinSystem:
        off = np.broadcast_to(np.asarray(self.freq_offset, float), (nominal.n,))
        return nominal.replace(nu0=nominal.nu0 + off, J=nominal.J * self.j_scale)

    def apply(self, amps: np.ndarray, b_max: float | None) -> np.ndarray:
        n_ch = amps.shape[1]
        scale = np.broadcast_to(np.asarray(self.amp_scale, float), (n_ch,))
        comp = np.broadcast_to(np.asarray(self.amp_compress, float), (n_ch,))
        out = amps * scale[None, :, None]
        if np.any(comp):
            ref = self.b_ref if self.b_ref is not None else b_max
            if ref is None:
                raise ValueError("amp_compress needs b_ref or a pulse b_max")
            mag2 = (amps[..., 0] ** 2 + amps[..., 1] ** 2) / ref ** 2
            out = out * (1.0 - comp[None, :] * mag2)[..., None]
        return out

    @property
    def is_identity(self) -> bool:
        return (np.all(np.asarray(self.amp_scale) == 1)
                and not np.any(self.amp_compress)
                and not np.any(self.freq_offset) and self.j_scale == 1)


@dataclass(frozen=True)
class Insertion:
    """Local rotation by ``sign * pi/2`` about ``axis`` on ``qubit``.

    ``after_slice`` counts applied slices, so 1 means between slices 1 and 2
    and ``M`` means after the whole pulse.
    """

    qubit: int
    axis: str
    sign: int
    after_slice: int

    def __post_init__(self):
        if self.axis not in ("x", "y"):
            raise ValueError("axis must be 'x' or 'y'")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")


@dataclass(frozen=True)
class ExperimentSpec:
    pulse: ControlPulse
    rho_i: np.ndarray
    observable: PauliDecomposition
    insertion: Insertion | None = None
    tag: int = 0

    def __post_init__(self):
        if self.observable.G < 1:
            raise ValueError("observable must have at least one term")
        ins = self.insertion
        if ins is not None and not 1 <= ins.after_slice <= self.pulse.M:
            raise ValueError(
                f"insertion after slice {ins.after_slice} outside 1..{self.pulse.M}")

    def digest(self) -> bytes:
        h = hashlib.sha256()
        h.update(self.pulse.amps.tobytes())
        h.update(struct.pack("<d", self.pulse.dt))
        h.update(np.ascontiguousarray(self.rho_i, dtype=complex).tobytes())
        h.update(str(self.observable).encode())
        if self.insertion is not None:
            i = self.insertion
            h.update(f"{i.qubit}/{i.axis}/{i.sign}/{i.after_slice}".encode())
        h.update(struct.pack("<q", self.tag))
        return h.digest()


def dephasing_factors(sys: SpinSystem, dt: float) -> np.ndarray:
    """Elementwise decay ``exp(-dt sum_{k: a_k != b_k} 1/T2_k)`` on ``|a><b|``.

    An off-diagonal bit in qubit k is exactly an X or Y factor on that qubit
    in the Pauli expansion, so this is the per-term Pauli decay.
    """
    rates = np.where(np.isinf(sys.T2), 0.0, 1.0 / sys.T2)
    bits = (1 - z_signs(sys.n)) // 2
    flips = bits[:, None, :] ^ bits[None, :, :]
    return np.exp(-dt * (flips @ rates))


def apply_dephasing_step(rho: np.ndarray, sys: SpinSystem, dt: float) -> np.ndarray:
    """Independent phase damping at rate ``1/T2`` on every qubit for ``dt``."""
    if dt < 0:
        raise ValueError("dt must be >= 0")
    rho = check_state(rho, sys.dim)
    return rho * dephasing_factors(sys, dt)


class _Processor:
    """Noise-free part of the simulation with byte-budgeted per-pulse caches.

    Inserted-rotation experiments share the forward states of their pulse
    and the backward (Heisenberg-picture) propagated observables, so each
    costs a local rotation and a trace instead of a fresh propagation. The
    dephasing mask is real and symmetric, hence self-adjoint under the trace
    inner product, so the backward pass uses the same mask.
    """

    def __init__(self, sys_true: SpinSystem, distortion: DistortionModel,
                 dephasing: bool, rotation_error: float,
                 cache_bytes: int = CACHE_BYTES):
        self.sys = sys_true
        self.distortion = distortion
        self.dephasing = dephasing
        self.rotation_error = rotation_error
        self.slices = SliceCache(sys_true)
        self._decay = {}
        self._cache = OrderedDict()
        self._cache_used = 0
        self._cache_bytes = cache_bytes
        self._lock = threading.Lock()

    def decay(self, dt):
        if not self.dephasing:
            return None
        if dt not in self._decay:
            self._decay[dt] = dephasing_factors(self.sys, dt)
        return self._decay[dt]

    def _cached(self, key, build):
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        value = build()
        with self._lock:
            if key not in self._cache and value.nbytes <= self._cache_bytes:
                self._cache[key] = value
                self._cache_used += value.nbytes
                while self._cache_used > self._cache_bytes:
                    _, old = self._cache.popitem(last=False)
                    self._cache_used -= old.nbytes
        return value

    @staticmethod
    def _pulse_key(pulse: ControlPulse):
        return (pulse.dt, pulse.b_max, pulse.amps.tobytes())

    def propagators(self, pulse: ControlPulse) -> np.ndarray:
        def build():
            amps = self.distortion.apply(pulse.amps, pulse.b_max)
            return self.slices.all_propagators(
                ControlPulse(amps, pulse.dt, channel_names=pulse.channel_names))
        return self._cached(("U",) + self._pulse_key(pulse), build)

    def forward_states(self, pulse: ControlPulse, rho_i: np.ndarray) -> np.ndarray:
        """States after each slice, including dephasing; index 0 is the input."""
        def build():
            props, decay = self.propagators(pulse), self.decay(pulse.dt)
            out = np.empty((pulse.M + 1, self.sys.dim, self.sys.dim), dtype=complex)
            out[0] = rho_i
            for m in range(pulse.M):
                out[m + 1] = conjugate(props[m], out[m])
                if decay is not None:
                    out[m + 1] *= decay
            return out
        return self._cached(("F",) + self._pulse_key(pulse) + (rho_i.tobytes(),), build)

    def backward_observables(self, pulse: ControlPulse, ops: str) -> np.ndarray:
        """``O[k]`` with ``tr(O[k] rho_k) = tr(P rho_M)`` for the state after slice k."""
        def build():
            props, decay = self.propagators(pulse), self.decay(pulse.dt)
            out = np.empty((pulse.M + 1, self.sys.dim, self.sys.dim), dtype=complex)
            out[pulse.M] = pauli_matrix(ops)
            for m in range(pulse.M - 1, -1, -1):
                O = out[m + 1] if decay is None else out[m + 1] * decay
                out[m] = props[m].conj().T @ O @ props[m]
            return out
        return self._cached(("B",) + self._pulse_key(pulse) + (ops,), build)

    def final_state(self, spec: ExperimentSpec) -> np.ndarray:
        """State reaching the detector (forward propagation only)."""
        pulse = spec.pulse
        rho_i = check_state(spec.rho_i, self.sys.dim)
        states = self.forward_states(pulse, rho_i)
        ins = spec.insertion
        if ins is None:
            return states[pulse.M]
        rho = conjugate(self._insertion(ins), states[ins.after_slice])
        props, decay = self.propagators(pulse), self.decay(pulse.dt)
        for m in range(ins.after_slice, pulse.M):
            rho = conjugate(props[m], rho)
            if decay is not None:
                rho = rho * decay
        return rho

    def _insertion(self, ins: Insertion) -> np.ndarray:
        if not 0 <= ins.qubit < self.sys.n:
            raise ValueError(f"insertion qubit {ins.qubit} out of range")
        angle = ins.sign * (np.pi / 2 + self.rotation_error)
        return rotation(self.sys.n, ins.qubit, ins.axis, angle)

    def expectations(self, spec: ExperimentSpec) -> list[tuple[float, float]]:
        """``(coeff, tr(P rho) / 2^n)`` for every observable term."""
        ins = spec.insertion
        if ins is None:
            return _expectations(self.final_state(spec), spec.observable)
        rho_i = check_state(spec.rho_i, self.sys.dim)
        rho = conjugate(self._insertion(ins),
                        self.forward_states(spec.pulse, rho_i)[ins.after_slice])
        dim = self.sys.dim
        out = []
        for t in spec.observable:
            O = self.backward_observables(spec.pulse, t.ops)[ins.after_slice]
            out.append((t.coeff, float(np.vdot(O, rho).real) / dim))
        return out


def _expectations(rho: np.ndarray, observable: PauliDecomposition):
    dim = rho.shape[0]
    return [(t.coeff, float(np.vdot(pauli_matrix(t.ops), rho).real) / dim)
            for t in observable]


def _readout(spec: ExperimentSpec, terms: list[tuple[float, float]], noise: NoiseModel
             ) -> float:
    gain = noise.readout_gain
    if noise.shots is None and noise.readout_sigma == 0:
        return gain * sum(c * e for c, e in terms)
    rng = np.random.default_rng(
        [noise.seed & 0xFFFFFFFF, *struct.unpack("<4I", spec.digest()[:16])])
    if noise.shots is not None:
        total = 0.0
        for c, e in terms:
            p = min(max((1 + gain * e) / 2, 0.0), 1.0)
            total += c * (2 * rng.binomial(noise.shots, p) / noise.shots - 1)
        return total
    return gain * sum(c * e for c, e in terms) + rng.normal(0.0, noise.readout_sigma)


def _check_dims(spec: ExperimentSpec, sys: SpinSystem) -> None:
    if spec.pulse.n_channels != sys.n_channels:
        raise ValueError("pulse channel count does not match the device")
    if spec.observable.n != sys.n:
        raise ValueError(f"observable acts on {spec.observable.n} qubits, device has {sys.n}")
    if np.shape(spec.rho_i) != (sys.dim, sys.dim):
        raise ValueError("input state dimension does not match the device")


def execute(spec: ExperimentSpec, sys_true: SpinSystem, noise: NoiseModel,
            distortion: DistortionModel | None = None) -> float:
    """Run one experiment on ``sys_true`` and return the measured expectation.

    Per slice: distorted amplitudes, unitary step, dephasing for ``dt``. The
    optional insertion acts instantaneously between slices. The result is
    ``sum_g x_g tr(rho P_g) / 2^n`` plus readout noise; noise draws depend
    only on ``noise.seed`` and the experiment itself.
    """
    _check_dims(spec, sys_true)
    proc = _Processor(sys_true, distortion or DistortionModel(), noise.dephasing,
                      noise.rotation_error)
    return _readout(spec, proc.expectations(spec), noise)


class DeviceHandle:
    """Measurement-only access to a virtual processor.

    Public attributes are the register layout (``n``, ``channel``); the
    physical parameters live in a closure.
    """

    __slots__ = ("n", "dim", "channel", "n_channels", "_run", "_count", "_lock")

    def __init__(self, run, n: int, channel: tuple[int, ...], n_channels: int):
        self._run = run
        self.n = n
        self.dim = 2 ** n
        self.channel = channel
        self.n_channels = n_channels
        self._count = 0
        self._lock = threading.Lock()

    def execute(self, spec: ExperimentSpec) -> float:
        value = self._run(spec)
        with self._lock:
            self._count += 1
        return value

    @property
    def experiments(self) -> int:
        with self._lock:
            return self._count

    def __repr__(self):
        return f"DeviceHandle(n={self.n}, experiments={self.experiments})"


def make_device(nominal: SpinSystem, true_overrides: DistortionModel | None = None,
                noise: NoiseModel | None = None) -> DeviceHandle:
    distortion = true_overrides or DistortionModel()
    noise = noise or NoiseModel()
    sys_true = distortion.true_system(nominal)
    proc = _Processor(sys_true, distortion, noise.dephasing, noise.rotation_error)

    def run(spec: ExperimentSpec) -> float:
        _check_dims(spec, sys_true)
        return _readout(spec, proc.expectations(spec), noise)

    return DeviceHandle(run, nominal.n, tuple(int(c) for c in nominal.channel),
                        nominal.n_channels)
