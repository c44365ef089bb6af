"""Piecewise-constant control pulses and their propagators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spinsys import SpinSystem, check_state, drift_diagonal, single_qubit_op

UNITARY_TOL = 1e-10


@dataclass(frozen=True)
class ControlPulse:
    """``M`` slices of per-channel ``(Bx, By)`` amplitudes in rad/s.

    ``amps[m, c]`` is ``(Bx, By)`` for channel ``c`` during slice ``m``. A
    slice of width ``dt`` with ``Bx = b`` rotates by ``2 b dt`` about x.
    ``opt_mask[m]`` is False for frozen slices (free evolutions and fixed
    segments), which optimisers never touch.
    """

    amps: np.ndarray
    dt: float
    opt_mask: np.ndarray | None = None
    b_max: float | None = None
    channel_names: tuple[str, ...] = ()

    def __post_init__(self):
        amps = np.array(self.amps, dtype=float)
        if amps.ndim != 3 or amps.shape[2] != 2:
            raise ValueError(f"amps must have shape (M, channels, 2), got {amps.shape}")
        M = amps.shape[0]
        mask = (np.ones(M, dtype=bool) if self.opt_mask is None
                else np.array(self.opt_mask, dtype=bool).reshape(-1))
        if mask.size != M:
            raise ValueError(f"opt_mask has {mask.size} entries for {M} slices")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.b_max is not None and not self.b_max > 0:
            raise ValueError("b_max must be positive")
        if not np.all(np.isfinite(amps)):
            raise ValueError("non-finite amplitude")
        names = tuple(self.channel_names) or tuple(f"ch{c}" for c in range(amps.shape[1]))
        if len(names) != amps.shape[1]:
            raise ValueError("channel_names length must match the channel axis")
        amps.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "amps", amps)
        object.__setattr__(self, "opt_mask", mask)
        object.__setattr__(self, "dt", float(self.dt))
        object.__setattr__(self, "channel_names", names)

    @property
    def M(self) -> int:
        return self.amps.shape[0]

    @property
    def n_channels(self) -> int:
        return self.amps.shape[1]

    @property
    def duration(self) -> float:
        return self.M * self.dt

    @property
    def opt_slices(self) -> np.ndarray:
        return np.flatnonzero(self.opt_mask)

    def with_amps(self, amps: np.ndarray) -> "ControlPulse":
        """Copy with new amplitudes on optimisable slices, clamped to ``b_max``.

        Frozen slices keep their stored values bit for bit.
        """
        new = np.array(self.amps, copy=True)
        amps = np.asarray(amps, dtype=float)
        new[self.opt_mask] = amps[self.opt_mask]
        if self.b_max is not None:
            mag = np.hypot(new[..., 0], new[..., 1])
            scale = np.where(mag > self.b_max, self.b_max / np.maximum(mag, 1e-300), 1.0)
            scale[~self.opt_mask] = 1.0
            new *= scale[..., None]
        return ControlPulse(new, self.dt, self.opt_mask, self.b_max, self.channel_names)

    def concat(self, other: "ControlPulse") -> "ControlPulse":
        if other.dt != self.dt or other.n_channels != self.n_channels:
            raise ValueError("pulses must share dt and channel layout")
        return ControlPulse(
            np.concatenate([self.amps, other.amps]), self.dt,
            np.concatenate([self.opt_mask, other.opt_mask]),
            self.b_max, self.channel_names)

    def reversed(self) -> "ControlPulse":
        """Slice-reversed, amplitude-negated copy (inverse pulse when drift is zero)."""
        return ControlPulse(-self.amps[::-1], self.dt, self.opt_mask[::-1],
                            self.b_max, self.channel_names)

    @classmethod
    def zeros(cls, M: int, n_channels: int, dt: float, **kw) -> "ControlPulse":
        return cls(np.zeros((M, n_channels, 2)), dt, **kw)


def channel_operators(sys: SpinSystem) -> np.ndarray:
    """``(n_channels, 2, dim, dim)`` summed sigma_x / sigma_y per channel."""
    ops = np.zeros((sys.n_channels, 2, sys.dim, sys.dim), dtype=complex)
    for k in range(sys.n):
        c = sys.channel[k]
        ops[c, 0] += single_qubit_op("X", k, sys.n)
        ops[c, 1] += single_qubit_op("Y", k, sys.n)
    return ops


def _check_channels(sys: SpinSystem, pulse: ControlPulse) -> None:
    if pulse.n_channels != sys.n_channels:
        raise ValueError(
            f"pulse has {pulse.n_channels} channels, system has {sys.n_channels}")


def control_hamiltonian(sys: SpinSystem, pulse: ControlPulse, m: int,
                        _ops: np.ndarray | None = None) -> np.ndarray:
    """Control Hamiltonian of slice ``m`` (0-based)."""
    _check_channels(sys, pulse)
    if not 0 <= m < pulse.M:
        raise IndexError(f"slice {m} out of range for M={pulse.M}")
    ops = channel_operators(sys) if _ops is None else _ops
    return np.einsum("cs,csij->ij", pulse.amps[m], ops)


def expm_hermitian(H: np.ndarray, t: float) -> np.ndarray:
    """``exp(-i H t)`` for Hermitian ``H`` via eigendecomposition."""
    w, V = np.linalg.eigh(H)
    return (V * np.exp(-1j * w * t)) @ V.conj().T


class SliceCache:
    """Drift diagonal and channel operators reused across slices of one system."""

    def __init__(self, sys: SpinSystem):
        self.sys = sys
        self.h0 = np.diag(drift_diagonal(sys)).astype(complex)
        self.ops = channel_operators(sys)

    def hamiltonian(self, amps_m: np.ndarray) -> np.ndarray:
        return self.h0 + np.einsum("cs,csij->ij", amps_m, self.ops)

    def propagator(self, amps_m: np.ndarray, dt: float) -> np.ndarray:
        if not np.any(amps_m):
            # drift is diagonal; skip the eigensolver
            return np.diag(np.exp(-1j * np.diag(self.h0).real * dt))
        return expm_hermitian(self.hamiltonian(amps_m), dt)

    def all_propagators(self, pulse: ControlPulse) -> np.ndarray:
        _check_channels(self.sys, pulse)
        out = np.empty((pulse.M, self.sys.dim, self.sys.dim), dtype=complex)
        free = None
        for m in range(pulse.M):
            if not np.any(pulse.amps[m]):
                if free is None:
                    free = self.propagator(pulse.amps[m], pulse.dt)
                out[m] = free
            else:
                out[m] = self.propagator(pulse.amps[m], pulse.dt)
        return out


def slice_propagator(sys: SpinSystem, pulse: ControlPulse, m: int) -> np.ndarray:
    """``U_m = exp(-i (H_s + H_c[m]) dt)`` for slice ``m`` (0-based)."""
    _check_channels(sys, pulse)
    if not 0 <= m < pulse.M:
        raise IndexError(f"slice {m} out of range for M={pulse.M}")
    return SliceCache(sys).propagator(pulse.amps[m], pulse.dt)


def slice_propagators(sys: SpinSystem, pulse: ControlPulse) -> np.ndarray:
    return SliceCache(sys).all_propagators(pulse)


def total_propagator(sys: SpinSystem, pulse: ControlPulse) -> np.ndarray:
    """``U_M ... U_2 U_1``; identity for an empty pulse."""
    U = np.eye(sys.dim, dtype=complex)
    for Um in slice_propagators(sys, pulse):
        U = Um @ U
    return U


def conjugate(U: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return U @ rho @ U.conj().T


def evolve(sys: SpinSystem, pulse: ControlPulse, rho_i: np.ndarray) -> np.ndarray:
    """``U rho_i U^dagger`` with ``U`` the total pulse propagator."""
    rho_i = check_state(rho_i, sys.dim)
    return conjugate(total_propagator(sys, pulse), rho_i)


def is_unitary(U: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    return bool(np.max(np.abs(U @ U.conj().T - np.eye(U.shape[0]))) < tol)


def rotation(n: int, k: int, axis: str, angle: float) -> np.ndarray:
    """``exp(-i angle/2 sigma_axis^k)`` on qubit ``k`` of ``n``."""
    P = single_qubit_op(axis.upper(), k, n)
    return np.cos(angle / 2) * np.eye(2 ** n) - 1j * np.sin(angle / 2) * P
