"""Spin systems, Pauli algebra and deviation-state helpers.

States are plain complex numpy arrays holding the traceless ("deviation")
part of an ensemble density matrix. Qubit 0 is the leftmost tensor factor,
so ``"XZ"`` means ``X (x) Z`` and qubit 0 is the most significant bit of a
computational-basis index.

All Hamiltonians are in rad/s; frequencies enter in Hz and pick up the
``-pi`` / ``pi/2`` prefactors here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from typing import Iterable, Sequence

import numpy as np

DENSE_QUBIT_CAP = 10
HERMITIAN_TOL = 1e-10

PAULI_LABELS = "IXYZ"
_PAULI = {
    "I": np.array([[1, 0], [0, 1]], dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
# stacked in IXYZ order, used by the fast decomposition
_PAULI_STACK = np.stack([_PAULI[p] for p in PAULI_LABELS])


class SpinSystemError(ValueError):
    """Raised when a spin system violates its invariants."""


def check_qubit_cap(n: int, cap: int | None = None) -> None:
    cap = DENSE_QUBIT_CAP if cap is None else cap
    if n < 1:
        raise ValueError(f"qubit count must be >= 1, got {n}")
    if n > cap:
        raise ValueError(f"{n} qubits exceeds the dense-matrix cap of {cap}")


@dataclass(frozen=True)
class SpinSystem:
    """Nominal model of a coupled spin register.

    Parameters
    ----------
    nu0 : array_like, shape (n,)
        Rotating-frame frequency of each qubit in Hz.
    J : array_like, shape (n, n)
        Symmetric scalar-coupling matrix in Hz with zero diagonal.
    channel : array_like of int, shape (n,)
        Control channel index of every qubit.
    gamma_weight : array_like, shape (n_channels,)
        Relative gyromagnetic weight of each channel.
    T2, T1 : array_like, shape (n,)
        Relaxation times in seconds. ``np.inf`` disables dephasing.
    channel_names : sequence of str, optional
        Display names of the channels.
    """

    nu0: np.ndarray
    J: np.ndarray
    channel: np.ndarray
    gamma_weight: np.ndarray
    T2: np.ndarray
    T1: np.ndarray
    channel_names: tuple[str, ...] = ()
    qubit_names: tuple[str, ...] = ()
    allow_empty_channels: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        nu0 = np.asarray(self.nu0, dtype=float).reshape(-1)
        n = nu0.size
        J = np.asarray(self.J, dtype=float)
        channel = np.asarray(self.channel, dtype=int).reshape(-1)
        gamma = np.asarray(self.gamma_weight, dtype=float).reshape(-1)
        T2 = np.broadcast_to(np.asarray(self.T2, dtype=float), (n,)).copy()
        T1 = np.broadcast_to(np.asarray(self.T1, dtype=float), (n,)).copy()

        check_qubit_cap(n)
        if not (np.all(np.isfinite(nu0)) and np.all(np.isfinite(gamma))):
            raise SpinSystemError("frequencies and channel weights must be finite")
        if J.shape != (n, n):
            raise SpinSystemError(f"J must be {n}x{n}, got {J.shape}")
        if not np.all(np.isfinite(J)):
            raise SpinSystemError("couplings must be finite")
        if np.any(np.diag(J) != 0):
            raise SpinSystemError("J must have a zero diagonal")
        bad = np.argwhere(np.abs(J - J.T) > 1e-12)
        if bad.size:
            i, j = bad[0]
            raise SpinSystemError(
                f"J is not symmetric: J[{i},{j}]={J[i, j]} vs J[{j},{i}]={J[j, i]}")
        if channel.size != n:
            raise SpinSystemError("channel must have one entry per qubit")
        n_ch = gamma.size
        if n_ch < 1 or channel.min() < 0 or channel.max() >= n_ch:
            raise SpinSystemError("channel index out of range")
        if not self.allow_empty_channels:
            empty = sorted(set(range(n_ch)) - set(channel.tolist()))
            if empty:
                raise SpinSystemError(f"channels without qubits: {empty}")
        if np.any(~(T2 > 0)):
            raise SpinSystemError("T2 must be positive (inf allowed)")

        names = tuple(self.channel_names) or tuple(f"ch{c}" for c in range(n_ch))
        if len(names) != n_ch:
            raise SpinSystemError("channel_names length must match gamma_weight")
        qnames = tuple(self.qubit_names) or tuple(f"q{i}" for i in range(n))
        if len(qnames) != n:
            raise SpinSystemError("qubit_names length must match qubit count")

        for arr in (nu0, J, channel, gamma, T2, T1):
            arr.setflags(write=False)
        object.__setattr__(self, "nu0", nu0)
        object.__setattr__(self, "J", J)
        object.__setattr__(self, "channel", channel)
        object.__setattr__(self, "gamma_weight", gamma)
        object.__setattr__(self, "T2", T2)
        object.__setattr__(self, "T1", T1)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "qubit_names", qnames)

    @property
    def n(self) -> int:
        return self.nu0.size

    @property
    def dim(self) -> int:
        return 2 ** self.n

    @property
    def n_channels(self) -> int:
        return self.gamma_weight.size

    def channel_qubits(self, c: int) -> list[int]:
        return [int(q) for q in np.flatnonzero(self.channel == c)]

    def replace(self, **changes) -> "SpinSystem":
        kwargs = dict(
            nu0=self.nu0, J=self.J, channel=self.channel,
            gamma_weight=self.gamma_weight, T2=self.T2, T1=self.T1,
            channel_names=self.channel_names, qubit_names=self.qubit_names,
            allow_empty_channels=self.allow_empty_channels,
        )
        kwargs.update(changes)
        return SpinSystem(**kwargs)


@dataclass(frozen=True)
class PauliString:
    ops: str
    coeff: float = 1.0

    def __post_init__(self):
        ops = self.ops.upper()
        if not ops or set(ops) - set(PAULI_LABELS):
            raise ValueError(f"invalid Pauli string {self.ops!r}")
        object.__setattr__(self, "ops", ops)
        object.__setattr__(self, "coeff", float(self.coeff))

    @property
    def weight(self) -> int:
        return sum(p != "I" for p in self.ops)

    def __len__(self):
        return len(self.ops)


@dataclass(frozen=True)
class PauliDecomposition:
    terms: tuple[PauliString, ...]

    def __post_init__(self):
        terms = tuple(self.terms)
        seen = set()
        for t in terms:
            if t.ops in seen:
                raise ValueError(f"duplicate Pauli term {t.ops}")
            seen.add(t.ops)
        if len({len(t) for t in terms}) > 1:
            raise ValueError("Pauli terms have mixed lengths")
        object.__setattr__(self, "terms", terms)

    @property
    def G(self) -> int:
        return len(self.terms)

    @property
    def n(self) -> int:
        return len(self.terms[0]) if self.terms else 0

    def __iter__(self):
        return iter(self.terms)

    def __len__(self):
        return len(self.terms)

    def sq_norm(self) -> float:
        """Sum of squared coefficients; ``tr(rho^2) / 2^n`` of the state."""
        return float(sum(t.coeff ** 2 for t in self.terms))

    def to_matrix(self) -> np.ndarray:
        if not self.terms:
            raise ValueError("empty decomposition has no dimension")
        return sum(pauli_matrix(t, self.n) for t in self.terms)

    @classmethod
    def parse(cls, text: str) -> "PauliDecomposition":
        """Parse ``"ZZZZ"`` or ``"0.7*ZZ + 0.7*XX - YY"``."""
        terms = []
        s = text.replace(" ", "").replace("-", "+-")
        for chunk in filter(None, s.split("+")):
            if "*" in chunk:
                c, ops = chunk.split("*", 1)
                coeff = float(c)
            elif chunk.startswith("-"):
                coeff, ops = -1.0, chunk[1:]
            else:
                coeff, ops = 1.0, chunk
            terms.append(PauliString(ops, coeff))
        if not terms:
            raise ValueError(f"no Pauli terms in {text!r}")
        return cls(tuple(terms))

    def __str__(self):
        return " + ".join(f"{t.coeff:g}*{t.ops}" for t in self.terms)


@lru_cache(maxsize=None)
def _pauli_unit(ops: str) -> np.ndarray:
    mat = np.array([[1.0 + 0j]])
    for p in ops:
        mat = np.kron(mat, _PAULI[p])
    mat.setflags(write=False)
    return mat


def pauli_matrix(p: PauliString | str, n: int | None = None) -> np.ndarray:
    """Dense matrix ``coeff * P_1 (x) ... (x) P_n``."""
    if isinstance(p, str):
        p = PauliString(p)
    n = len(p) if n is None else n
    if len(p) != n:
        raise ValueError(f"Pauli string {p.ops} has length {len(p)}, expected {n}")
    check_qubit_cap(n)
    return p.coeff * _pauli_unit(p.ops)


def single_qubit_op(label: str, k: int, n: int) -> np.ndarray:
    """``label`` acting on qubit ``k`` of ``n``, identity elsewhere."""
    return _pauli_unit("I" * k + label + "I" * (n - k - 1))


def z_signs(n: int) -> np.ndarray:
    """``(2^n, n)`` array of sigma_z eigenvalues per basis state and qubit."""
    bits = (np.arange(2 ** n)[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    return 1 - 2 * bits


def drift_diagonal(sys: SpinSystem) -> np.ndarray:
    """Diagonal of the drift Hamiltonian (rad/s)."""
    z = z_signs(sys.n).astype(float)
    shifts = -np.pi * z @ sys.nu0
    couplings = 0.25 * np.pi * np.einsum("bi,ij,bj->b", z, sys.J, z)
    return shifts + couplings


def drift_hamiltonian(sys: SpinSystem) -> np.ndarray:
    return np.diag(drift_diagonal(sys)).astype(complex)


def thermal_deviation_state(sys: SpinSystem) -> np.ndarray:
    """``sum_i w(channel(i)) Z_i``, the high-temperature deviation state."""
    z = z_signs(sys.n).astype(float)
    weights = sys.gamma_weight[sys.channel]
    return np.diag(z @ weights).astype(complex)


def is_deviation_state(rho: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        return False
    return bool(np.max(np.abs(rho - rho.conj().T)) < tol and abs(np.trace(rho)) < tol)


def check_state(rho: np.ndarray, dim: int | None = None) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if dim is not None and rho.shape != (dim, dim):
        raise ValueError(f"state has shape {rho.shape}, expected {(dim, dim)}")
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"state must be a square matrix, got {rho.shape}")
    return rho


def pauli_coefficients(mat: np.ndarray) -> np.ndarray:
    """Coefficients ``x_P = tr(mat P) / 2^n`` as an ``(4,)*n`` array.

    Index 0..3 along each axis is I, X, Y, Z. Costs O(n 4^n) instead of
    4^n separate traces.
    """
    mat = np.asarray(mat, dtype=complex)
    dim = mat.shape[0]
    n = int(round(np.log2(dim)))
    if 2 ** n != dim or mat.shape != (dim, dim):
        raise ValueError(f"not a 2^n x 2^n matrix: {mat.shape}")
    t = mat.reshape((2,) * (2 * n))
    # axes: a_1..a_n, b_1..b_n ; contract (a_k, b_k) with P[b_k, a_k]
    for k in range(n):
        # a_k sits at axis k, b_k at axis n (the earlier ones were consumed)
        t = np.tensordot(t, _PAULI_STACK, axes=([k, n], [2, 1]))
        t = np.moveaxis(t, -1, k)
    return t / dim


def decompose_state(rho: np.ndarray, tol: float = 1e-12) -> PauliDecomposition:
    """Sparse Pauli decomposition of a Hermitian traceless matrix.

    The identity component is never emitted. Terms with ``|x| <= tol`` are
    dropped, so the zero matrix yields an empty decomposition.
    """
    rho = check_state(rho)
    coeffs = pauli_coefficients(rho)
    n = coeffs.ndim
    terms = []
    for idx in zip(*np.nonzero(np.abs(coeffs) > tol)):
        if not any(idx):
            continue
        ops = "".join(PAULI_LABELS[i] for i in idx)
        terms.append(PauliString(ops, float(coeffs[idx].real)))
    if terms:
        assert len(terms[0]) == n
    return PauliDecomposition(tuple(terms))


def all_pauli_strings(n: int, include_identity: bool = False) -> list[str]:
    out = ["".join(p) for p in product(PAULI_LABELS, repeat=n)]
    return out if include_identity else out[1:]


def rebuild_state(decomp: PauliDecomposition | Iterable[PauliString], n: int) -> np.ndarray:
    dim = 2 ** n
    out = np.zeros((dim, dim), dtype=complex)
    for t in decomp:
        out += pauli_matrix(t, n)
    return out


def state_norm(rho: np.ndarray) -> float:
    """Frobenius norm ``sqrt(tr(rho^2))`` of a Hermitian matrix."""
    return float(np.sqrt(np.vdot(rho, rho).real))


def basis_index(bits: Sequence[int]) -> int:
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx
