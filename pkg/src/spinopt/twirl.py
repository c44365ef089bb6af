"""Average gate fidelity of Clifford implementations by Pauli twirling.

For a Clifford ``U`` and an implementation ``Lambda``::

    Pr(0) = 1/4^n + 1/4^n * sum_k tr(Lambda(P_k) U P_k U^dag) / 2^n
    F_avg = (2^n Pr(0) + 1) / (2^n + 1)

where the sum runs over the ``4^n - 1`` non-identity Pauli strings. Each
term is a state-transfer fidelity with a single signed Pauli target, so the
same terms double as a closed-loop gate objective.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .device import DeviceHandle
from .grape import OptimizationReport, gradient_ascent
from .mqfc import MqfcConfig, measure_fitness, measure_gradient
from .propagation import ControlPulse, conjugate, is_unitary
from .spinsys import (PAULI_LABELS, PauliDecomposition, PauliString,
                      all_pauli_strings, pauli_coefficients, pauli_matrix)

EXHAUSTIVE_MAX_QUBITS = 3
CLOSURE_TOL = 1e-10

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S = np.diag([1, 1j])
GATE_ARITY = {"H": 1, "S": 1, "CNOT": 2}
_ALIASES = {"HADAMARD": "H", "PHASE": "S", "CX": "CNOT"}


class CliffordError(ValueError):
    pass


def _gate_matrix(name: str, qubits: Sequence[int], n: int) -> np.ndarray:
    dim = 2 ** n
    if name in ("H", "S"):
        g = _H if name == "H" else _S
        q = qubits[0]
        return np.kron(np.kron(np.eye(2 ** q), g), np.eye(2 ** (n - q - 1)))
    c, t = qubits
    idx = np.arange(dim)
    cbit = (idx >> (n - 1 - c)) & 1
    out = idx ^ (cbit << (n - 1 - t))
    U = np.zeros((dim, dim), dtype=complex)
    U[out, idx] = 1.0
    return U


def _signed_image(U: np.ndarray, ops: str) -> tuple[float, str]:
    """``U P U^dag = sign * P'``; raises if the image is not a single Pauli."""
    n = len(ops)
    coeffs = pauli_coefficients(conjugate(U, pauli_matrix(ops, n))).reshape(-1)
    big = np.flatnonzero(np.abs(coeffs) > CLOSURE_TOL)
    if big.size != 1 or abs(abs(coeffs[big[0]]) - 1) > CLOSURE_TOL:
        raise CliffordError(f"{ops} is not mapped to a single signed Pauli string")
    c = coeffs[big[0]]
    if abs(c.imag) > CLOSURE_TOL:
        raise CliffordError(f"{ops} maps to a non-Hermitian image")
    digits = np.unravel_index(big[0], (4,) * n)
    return float(np.sign(c.real)), "".join(PAULI_LABELS[d] for d in digits)


@dataclass(frozen=True)
class CliffordSpec:
    """Circuit of H, S and CNOT gates; ``circuit`` entries are ``(name, qubits)``."""

    n: int
    circuit: tuple[tuple[str, tuple[int, ...]], ...] = ()
    unitary: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise CliffordError("need at least one qubit")
        circ = []
        U = np.eye(2 ** self.n, dtype=complex)
        for name, qubits in self.circuit:
            name = _ALIASES.get(str(name).upper(), str(name).upper())
            if name not in GATE_ARITY:
                raise CliffordError(f"unknown gate {name!r}")
            qubits = tuple(int(q) for q in qubits)
            if len(qubits) != GATE_ARITY[name] or len(set(qubits)) != len(qubits):
                raise CliffordError(f"{name} needs {GATE_ARITY[name]} distinct qubits")
            if any(not 0 <= q < self.n for q in qubits):
                raise CliffordError(f"{name} qubits {qubits} out of range")
            circ.append((name, qubits))
            U = _gate_matrix(name, qubits, self.n) @ U
        if not is_unitary(U):
            raise CliffordError("circuit unitary check failed")
        object.__setattr__(self, "circuit", tuple(circ))
        object.__setattr__(self, "unitary", U)
        object.__setattr__(self, "_images", {})
        if self.n <= EXHAUSTIVE_MAX_QUBITS:
            for ops in all_pauli_strings(self.n):
                self.image(ops)
        else:
            rng = np.random.default_rng(0)
            for _ in range(16):
                self.image("".join(rng.choice(list(PAULI_LABELS), self.n)))

    def image(self, ops: str) -> tuple[float, str]:
        """Signed Pauli image of ``ops`` under conjugation by the circuit."""
        cache = self._images
        if ops not in cache:
            if len(ops) != self.n:
                raise CliffordError(f"{ops} has wrong length for {self.n} qubits")
            cache[ops] = _signed_image(self.unitary, ops)
        return cache[ops]

    def target(self, ops: str) -> PauliDecomposition:
        sign, out = self.image(ops)
        return PauliDecomposition((PauliString(out, sign),))

    @classmethod
    def parse(cls, text: str, n: int | None = None) -> "CliffordSpec":
        """One gate per line (``H 0``, ``S 1``, ``CNOT 0 1``); ``#`` comments.

        An optional ``qubits N`` line fixes the register size.
        """
        circ = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0].lower() == "qubits":
                    n = int(parts[1])
                    continue
                circ.append((parts[0], tuple(int(p) for p in parts[1:])))
            except (ValueError, IndexError) as exc:
                raise CliffordError(f"line {lineno}: cannot parse {raw!r}") from exc
        if n is None:
            n = 1 + max((q for _, qs in circ for q in qs), default=0)
        try:
            return cls(n, tuple(circ))
        except CliffordError as exc:
            raise CliffordError(f"circuit: {exc}") from exc


@dataclass(frozen=True)
class SamplingPlan:
    """Hoeffding sample size for an additive ``epsilon_tol`` at confidence ``1 - delta``.

    Each term lies in ``[-1, 1]`` and enters ``Pr(0)`` with weight
    ``1 - 4^-n < 1``, which keeps the bound valid for every ``n``.
    """

    epsilon_tol: float = 0.05
    delta: float = 0.01

    def __post_init__(self):
        if not 0 < self.epsilon_tol:
            raise ValueError("epsilon_tol must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")

    @property
    def N(self) -> int:
        return max(1, math.ceil(math.log(2 / self.delta) / (2 * self.epsilon_tol ** 2)))


def avg_fidelity_from_pr0(pr0: float, n: int) -> float:
    if not 0 <= pr0 <= 1:
        raise ValueError(f"Pr(0) = {pr0} outside [0, 1]")
    d = 2 ** n
    return (d * pr0 + 1) / (d + 1)


def report_fidelity(pr0: float, n: int) -> float:
    """Like :func:`avg_fidelity_from_pr0` but clamps out-of-range estimates."""
    if not 0 <= pr0 <= 1:
        warnings.warn(f"Pr(0) estimate {pr0:.6g} clamped to [0, 1]", RuntimeWarning)
        pr0 = min(max(pr0, 0.0), 1.0)
    return avg_fidelity_from_pr0(pr0, n)


class MapChannel:
    """Explicit channel given as a map on density matrices."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n: int):
        self.fn = fn
        self.n = n

    def state_fidelity(self, ops: str, target: PauliDecomposition, tag: int = 0) -> float:
        out = self.fn(pauli_matrix(ops, self.n))
        return float(np.vdot(target.to_matrix(), out).real) / 2 ** self.n


class DeviceChannel:
    """A pulse run on a device; overlaps come from device measurements."""

    def __init__(self, device: DeviceHandle, pulse: ControlPulse):
        self.device = device
        self.pulse = pulse
        self.n = device.n

    def state_fidelity(self, ops: str, target: PauliDecomposition, tag: int = 0) -> float:
        return measure_fitness(self.device, self.pulse, pauli_matrix(ops, self.n),
                               target, normalize=True, tag=tag)


def _as_channel(channel, n: int):
    if hasattr(channel, "state_fidelity"):
        return channel
    if callable(channel):
        return MapChannel(channel, n)
    raise TypeError("channel must be a density-matrix map or expose state_fidelity")


def pr0_exact(channel, clifford: CliffordSpec) -> float:
    """Exhaustive ``Pr(0)`` over all non-identity Pauli inputs (``n <= 3``)."""
    n = clifford.n
    if n > EXHAUSTIVE_MAX_QUBITS:
        raise ValueError(f"exhaustive Pr(0) limited to n <= {EXHAUSTIVE_MAX_QUBITS}")
    ch = _as_channel(channel, n)
    total = sum(ch.state_fidelity(ops, clifford.target(ops)) for ops in all_pauli_strings(n))
    return (1 + total) / 4 ** n


def pr0_sampled(channel, clifford: CliffordSpec, plan: SamplingPlan,
                seed: int = 0) -> tuple[float, int]:
    """Monte Carlo ``Pr(0)`` from ``plan.N`` uniform non-identity Pauli inputs."""
    n = clifford.n
    ch = _as_channel(channel, n)
    rng = np.random.default_rng(seed)
    N = plan.N
    # index 0 of the base-4 enumeration is the identity
    draws = rng.integers(1, 4 ** n, size=N)
    terms = np.empty(N)
    for i, k in enumerate(draws):
        ops = _index_to_ops(int(k), n)
        terms[i] = ch.state_fidelity(ops, clifford.target(ops), tag=i)
    q = 4.0 ** -n
    return q + (1 - q) * float(terms.mean()), N


def _index_to_ops(k: int, n: int) -> str:
    digits = np.unravel_index(k, (4,) * n)
    return "".join(PAULI_LABELS[d] for d in digits)


def default_inputs(n: int, seed: int = 0, k: int = 15) -> list[str]:
    """All non-identity inputs for ``n <= 2``, otherwise ``k`` sampled without replacement."""
    if n <= 2:
        return all_pauli_strings(n)
    rng = np.random.default_rng(seed)
    idx = rng.choice(np.arange(1, 4 ** n), size=min(k, 4 ** n - 1), replace=False)
    return [_index_to_ops(int(i), n) for i in idx]


def _check_inputs(inputs, n):
    inputs = list(inputs)
    if not inputs:
        raise ValueError("need at least one Pauli input")
    for ops in inputs:
        if len(ops) != n or set(ops) - set(PAULI_LABELS) or set(ops) == {"I"}:
            raise ValueError(f"{ops!r} is not a non-identity Pauli string on {n} qubits")
    return inputs


def clifford_mqfc_objective(device: DeviceHandle, pulse: ControlPulse,
                            clifford: CliffordSpec, inputs: Sequence[str],
                            cfg: MqfcConfig | None = None,
                            ) -> tuple[float, np.ndarray, int]:
    """Mean measured state fitness and gradient over Pauli ``inputs``.

    Returns ``(objective, gradient, experiments)`` with
    ``experiments = K (4 n_opt M_opt + 1)``.
    """
    cfg = cfg or MqfcConfig()
    inputs = _check_inputs(inputs, device.n)
    start = device.experiments
    f, g = 0.0, np.zeros((pulse.M, pulse.n_channels, 2))
    for ops in inputs:
        rho_i, target = pauli_matrix(ops, device.n), clifford.target(ops)
        f += measure_fitness(device, pulse, rho_i, target, cfg.normalize)
        g += measure_gradient(device, pulse, rho_i, target, cfg)
    K = len(inputs)
    return f / K, g / K, device.experiments - start


def clifford_mqfc_optimize(device: DeviceHandle, pulse0: ControlPulse,
                           clifford: CliffordSpec, cfg: MqfcConfig,
                           inputs: Sequence[str] | None = None, seed: int = 0,
                           ) -> tuple[ControlPulse, OptimizationReport]:
    """Closed-loop gate optimisation on the mean of per-input state fitnesses."""
    if clifford.n != device.n:
        raise ValueError("Clifford and device qubit counts differ")
    inputs = _check_inputs(default_inputs(device.n, seed) if inputs is None else inputs,
                           device.n)
    pairs = [(pauli_matrix(ops, device.n), clifford.target(ops)) for ops in inputs]
    start = device.experiments
    # fresh tags so repeated measurements of one pulse see independent noise
    calls = iter(range(1, 1 << 62))

    def objective(p):
        tag = next(calls) << 8
        return float(np.mean([measure_fitness(device, p, r, t, cfg.normalize, tag=tag + k)
                              for k, (r, t) in enumerate(pairs)]))

    def gradient(p):
        tag = next(calls) << 8
        return sum(measure_gradient(device, p, r, t, cfg, tag + k)
                   for k, (r, t) in enumerate(pairs)) / len(pairs)

    pulse, report = gradient_ascent(
        pulse0, objective, gradient, cfg, kind="clifford-mqfc",
        counter=lambda: device.experiments - start)
    report.summary["inputs"] = list(inputs)
    return pulse, report
