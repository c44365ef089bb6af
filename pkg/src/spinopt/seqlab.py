"""Sequence-level helpers: pi-pulse refocusing, ZZ ladder steps, Pauli-weight
analysis and the single-probe stick spectrum.

Pauli weight (number of non-identity factors) is used throughout where NMR
texts would say "k-coherence" for ``Z^{(x)k}``-type terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .propagation import ControlPulse, expm_hermitian, rotation
from .spinsys import (SpinSystem, check_state, drift_hamiltonian,
                      pauli_coefficients, single_qubit_op)

DEFAULT_LINEWIDTH = 0.005  # Hz
AMPLITUDE_FLOOR = 1e-12


# ---------------------------------------------------------------- refocusing

@dataclass(frozen=True)
class RefocusSpec:
    """Request: ``partners`` maps qubit -> signed effective coupling time.

    Every other qubit coupled to anything is a spectator with target 0.
    """

    probe: int
    partners: tuple[tuple[int, float], ...]
    duration: float
    grid: int

    def __post_init__(self):
        parts = tuple((int(q), float(t)) for q, t in self.partners)
        object.__setattr__(self, "partners", parts)
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.probe in [q for q, _ in parts]:
            raise ValueError("probe cannot be its own partner")
        if len({q for q, _ in parts}) != len(parts):
            raise ValueError("duplicate partner")
        if self.grid < max(2, 2 * len(parts)):
            raise ValueError(f"grid must be >= 2 x partner count ({2 * len(parts)})")


@dataclass
class RefocusResult:
    spec: RefocusSpec
    signs: dict[int, np.ndarray]          # qubit -> (grid,) +-1
    flip_times: dict[int, list[float]]
    achieved: dict[tuple[int, int], float]  # pair -> effective time
    requested: dict[int, float]
    residual: float                        # max |t_eff| over unwanted coupled pairs
    partner_error: float                   # max |achieved - requested|
    inverted: list[int] = field(default_factory=list)

    @property
    def segment(self) -> float:
        return self.spec.duration / self.spec.grid


class ScheduleError(ValueError):
    def __init__(self, msg: str, residuals: dict | None = None):
        super().__init__(msg)
        self.residuals = residuals or {}


def _effective_times(signs: dict[int, np.ndarray], probe: int, tau: float):
    s = dict(signs)
    s[probe] = np.ones_like(next(iter(signs.values()))) if signs else None
    qs = sorted(s)
    return {(a, b): float(tau * np.sum(s[a] * s[b]))
            for i, a in enumerate(qs) for b in qs[i + 1:] if s[a] is not None}


def refocus_schedule(sys: SpinSystem, spec: RefocusSpec) -> RefocusResult:
    """Greedy +-1 sign functions on an equal-segment grid.

    The probe is never flipped. For qubit ``k`` the probe coupling acts for
    ``tau * sum(s_k)``; pair ``(k, l)`` for ``tau * sum(s_k s_l)``. Partners
    (largest requested time first) then coupled spectators each get the flip
    count that realises their target, with flips placed to keep already
    assigned couplings small; ties go to the latest segment. A few sweeps of
    pairwise segment swaps then reduce the worst residual.
    """
    n, G, T = sys.n, spec.grid, spec.duration
    tau = T / G
    if not 0 <= spec.probe < n or any(not 0 <= q < n for q, _ in spec.partners):
        raise ValueError("qubit index out of range")
    req = dict(spec.partners)
    bad = {q: abs(t) - T for q, t in req.items() if abs(t) > T * (1 + 1e-12)}
    if bad:
        raise ScheduleError(f"requested times exceed the window for qubits {sorted(bad)}",
                            bad)
    coupled = lambda a, b: sys.J[a, b] != 0  # noqa: E731
    spectators = [k for k in range(n) if k != spec.probe and k not in req
                  and any(coupled(k, l) for l in range(n) if l != k)]
    order = sorted(req, key=lambda q: -abs(req[q])) + spectators
    want = {q: req.get(q, 0.0) for q in order}

    signs: dict[int, np.ndarray] = {}

    def cost(k, s):
        # worst unwanted coupling between k and qubits already placed
        vals = [abs(np.sum(s * signs[l])) for l in signs if coupled(k, l)]
        return max(vals, default=0.0)

    for k in order:
        n_minus = int(round((G - want[k] / tau) / 2))
        n_minus = min(max(n_minus, 0), G)
        s = np.ones(G)
        for _ in range(n_minus):
            best, best_c = None, None
            for g in range(G - 1, -1, -1):
                if s[g] < 0:
                    continue
                s[g] = -1
                c = cost(k, s)
                s[g] = 1
                if best_c is None or c < best_c - 1e-12:
                    best, best_c = g, c
            s[best] = -1
        signs[k] = s

    def worst():
        return max((cost(k, signs[k]) for k in signs), default=0.0)

    # local improvement: swap one + and one - segment of a single qubit
    for _ in range(3):
        improved = False
        for k in order:
            s = signs[k]
            base = worst()
            if base == 0:
                break
            for a in np.flatnonzero(s < 0):
                for b in np.flatnonzero(s > 0):
                    s[a], s[b] = 1, -1
                    if worst() < base - 1e-12:
                        improved = True
                        base = worst()
                        break
                    s[a], s[b] = -1, 1
                else:
                    continue
                break
        if not improved:
            break

    achieved = _effective_times(signs, spec.probe, tau) if signs else {}
    residual = 0.0
    for (a, b), t in achieved.items():
        if spec.probe in (a, b):
            other = b if a == spec.probe else a
            if other in req or not coupled(a, b):
                continue
        elif not coupled(a, b):
            continue
        residual = max(residual, abs(t))
    perr = max((abs(achieved[tuple(sorted((spec.probe, q)))] - t) for q, t in req.items()),
               default=0.0)
    flips = {}
    for k, s in signs.items():
        prev = np.concatenate([[1.0], s[:-1]])
        flips[k] = [float(g * tau) for g in np.flatnonzero(s != prev)]
    inverted = [k for k, s in signs.items() if s[-1] < 0]
    return RefocusResult(spec, signs, flips, achieved, req, residual, perr, inverted)


def schedule_propagator(sys: SpinSystem, result: RefocusResult,
                        restore: bool = True) -> np.ndarray:
    """Brute-force propagator: drift segments with instantaneous pi_x flips.

    With ``restore`` a final pi_x is applied to qubits left inverted, so the
    ideal result is a pure ZZ evolution.
    """
    tau = result.segment
    Uf = expm_hermitian(drift_hamiltonian(sys), tau)
    U = np.eye(sys.dim, dtype=complex)
    for g in range(result.spec.grid):
        for k, times in result.flip_times.items():
            if any(abs(t - g * tau) < 1e-9 * tau for t in times):
                U = rotation(sys.n, k, "x", np.pi) @ U
        U = Uf @ U
    if restore:
        for k in result.inverted:
            U = rotation(sys.n, k, "x", np.pi) @ U
    return U


def ideal_evolution(sys: SpinSystem, result: RefocusResult, requested: bool = True
                    ) -> np.ndarray:
    """Toggling-frame target of a schedule (inverted qubits restored).

    Each qubit's shift acts for ``tau * sum(s_k)`` and each coupled pair for
    ``tau * sum(s_k s_l)``; with ``requested`` the probe-partner pairs use the
    requested times and every other pair is set to zero.
    """
    tau = result.segment
    probe = result.spec.probe
    s = {k: result.signs.get(k, np.ones(result.spec.grid)) for k in range(sys.n)}
    h = np.zeros(sys.dim)
    z = [np.diag(single_qubit_op("Z", k, sys.n)).real for k in range(sys.n)]
    for k in range(sys.n):
        h += -np.pi * sys.nu0[k] * tau * np.sum(s[k]) * z[k]
    for a in range(sys.n):
        for b in range(a + 1, sys.n):
            if sys.J[a, b] == 0:
                continue
            t = tau * np.sum(s[a] * s[b])
            if requested:
                other = b if a == probe else a if b == probe else None
                t = result.requested.get(other, 0.0) if other is not None else 0.0
            h += 0.5 * np.pi * sys.J[a, b] * t * z[a] * z[b]
    return np.diag(np.exp(-1j * h))


# ---------------------------------------------------------------- ZZ ladder

def zz_half_coupling(sys: SpinSystem, i: int, j: int, quarter: int = 250,
                     duration_scale: float = 1.0, strict: bool = True) -> ControlPulse:
    """Free evolution of total length ``1/(2 J_ij)`` with two hard pi pulses.

    Layout ``a | pi | 2a | pi | a`` with ``a`` made of ``quarter`` slices; the
    pi slices drive the channels of ``i`` and ``j`` at ``pi / (2 dt)``. Qubits
    on those channels are flipped twice, so chemical shifts and couplings to
    unflipped qubits refocus while ``Z_i Z_j`` keeps evolving. Other qubits
    sharing a flipped channel cannot be refocused; with ``strict`` a nonzero
    coupling from such a qubit to ``i`` or ``j`` raises.
    """
    if i == j or sys.J[i, j] == 0:
        raise ValueError(f"qubits {i} and {j} are not coupled")
    chans = sorted({int(sys.channel[i]), int(sys.channel[j])})
    if strict:
        bad = [(k, q) for k in range(sys.n) if sys.channel[k] in chans and k not in (i, j)
               for q in (i, j) if sys.J[k, q] != 0]
        if bad:
            raise ValueError(f"couplings {bad} share a flipped channel and would not refocus")
    q = max(1, int(quarter))
    dt = duration_scale / (2 * abs(sys.J[i, j])) / (4 * q)
    amps = np.zeros((4 * q + 2, sys.n_channels, 2))
    for m in (q, 3 * q + 1):
        amps[m, chans, 0] = np.pi / (2 * dt)
    return ControlPulse(amps, dt, opt_mask=np.zeros(len(amps), bool),
                        channel_names=sys.channel_names)


# ---------------------------------------------------------------- analysis

def pauli_weight_histogram(rho: np.ndarray) -> dict[int, float]:
    """Share of ``sum x_P^2`` carried by Pauli terms of each weight."""
    rho = check_state(rho)
    c = pauli_coefficients(rho)
    n = c.ndim
    sq = np.abs(c) ** 2
    sq[(0,) * n] = 0.0
    total = sq.sum()
    if total <= 0:
        raise ValueError("zero state has no Pauli weight distribution")
    nonid = np.indices(c.shape).astype(bool).sum(axis=0)
    out = {}
    for w in range(1, n + 1):
        share = float(sq[nonid == w].sum() / total)
        if share > 0:
            out[w] = share
    return out


@dataclass(frozen=True)
class SpectrumPeak:
    frequency: float  # Hz
    amplitude: float


def probe_spectrum(rho: np.ndarray, probe: int, sys: SpinSystem,
                   linewidth: float = DEFAULT_LINEWIDTH,
                   quadrature: str = "x") -> list[SpectrumPeak]:
    """Stick spectrum of ``probe`` with the other spins frozen in Z.

    For each basis configuration ``b`` of the other spins the line sits at
    ``nu_p - sum_j J_pj z_j / 2`` (``z_j = +1`` for bit 0) with amplitude
    ``tr(rho X_p (x) |b><b|) / 2^(n-1)`` (``Y_p`` for ``quadrature="y"``).
    Lines closer than ``linewidth`` are merged.
    """
    rho = check_state(rho, sys.dim)
    n = sys.n
    if not 0 <= probe < n:
        raise ValueError(f"probe {probe} out of range")
    if quadrature not in ("x", "y"):
        raise ValueError("quadrature must be 'x' or 'y'")
    others = [k for k in range(n) if k != probe]
    lines = []
    for cfg in range(2 ** (n - 1)):
        bits = [(cfg >> (n - 2 - r)) & 1 for r in range(n - 1)]
        idx0 = 0
        for k, b in zip(others, bits):
            idx0 |= b << (n - 1 - k)
        idx1 = idx0 | (1 << (n - 1 - probe))
        r01 = rho[idx0, idx1]
        amp = 2 * (r01.real if quadrature == "x" else -r01.imag) / 2 ** (n - 1)
        freq = sys.nu0[probe] - sum(sys.J[probe, k] * (1 - 2 * b) / 2
                                    for k, b in zip(others, bits))
        lines.append((float(freq), float(amp)))
    lines.sort()
    merged: list[list[float]] = []
    for f, a in lines:
        if merged and f - merged[-1][0] <= linewidth:
            last = merged[-1]
            last[2] += 1
            last[1] += a
            last[3] += f
        else:
            merged.append([f, a, 1, f])
    return [SpectrumPeak(m[3] / m[2], m[1]) for m in merged if abs(m[1]) >= AMPLITUDE_FLOOR]


def transverse_expectation(rho: np.ndarray, probe: int, n: int, quadrature: str = "x"
                           ) -> float:
    """``tr(rho sigma_probe (x) I) / 2^(n-1)``; the sum of all spectrum amplitudes."""
    op = single_qubit_op(quadrature.upper(), probe, n)
    return float(np.vdot(op, rho).real) / 2 ** (n - 1)


def ladder_system() -> SpinSystem:
    """3-qubit chain for the ladder demo; one channel per qubit so each ZZ
    step can leave the third qubit unflipped."""
    J = np.array([[0.0, 42.0, 17.0], [42.0, 0.0, 5.0], [17.0, 5.0, 0.0]])
    return SpinSystem(nu0=[15.0, -22.0, 9.0], J=J, channel=[0, 1, 2],
                      gamma_weight=[1.0, 1.0, 1.0], T2=[np.inf] * 3, T1=[np.inf] * 3)


def ladder_demo(sys: SpinSystem | None = None) -> tuple[np.ndarray, list[tuple[str, np.ndarray]]]:
    """Grow ``Z I I`` into a weight-3 term by two ZZ steps.

    Ideal local rotations on qubit 0 wrap the simulated
    :func:`zz_half_coupling` fragments: ``Ry(pi/2)``, ZZ(0,1), ZZ(0,2),
    ``Ry(-pi/2)``. Returns the final state and the intermediate states.
    """
    from .propagation import conjugate, evolve
    from .spinsys import pauli_matrix
    sys = sys or ladder_system()
    rho = pauli_matrix("Z" + "I" * (sys.n - 1))
    steps = [("start", rho)]
    rho = conjugate(rotation(sys.n, 0, "y", np.pi / 2), rho)
    steps.append(("ry(pi/2) q0", rho))
    for k in (1, 2):
        rho = evolve(sys, zz_half_coupling(sys, 0, k), rho)
        steps.append((f"zz(0,{k})", rho))
    rho = conjugate(rotation(sys.n, 0, "y", -np.pi / 2), rho)
    steps.append(("ry(-pi/2) q0", rho))
    return rho, steps
