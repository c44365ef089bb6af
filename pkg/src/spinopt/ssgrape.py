"""Subsystem GRAPE for gates.

Weak couplings between blocks of the register are cut, each block is
simulated in its own (much smaller) Hilbert space and one shared pulse is
optimised for all block targets at once. Everything here is still a
classical simulation whose cost grows exponentially with the block size;
cutting only moves the exponent from the register to the largest block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .grape import GrapeConfig, OptimizationReport, gradient_ascent
from .propagation import (ControlPulse, SliceCache, is_unitary, rotation,
                          total_propagator)
from .spinsys import SpinSystem


@dataclass(frozen=True)
class SubsystemPartition:
    """Disjoint qubit blocks covering the register.

    ``cut_couplings`` lists the inter-block pairs whose coupling is dropped;
    when omitted every coupled inter-block pair is cut.
    """

    blocks: tuple[tuple[int, ...], ...]
    cut_couplings: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        blocks = tuple(tuple(int(q) for q in b) for b in self.blocks)
        if any(len(b) == 0 for b in blocks):
            raise ValueError("empty block")
        object.__setattr__(self, "blocks", blocks)
        if self.cut_couplings is not None:
            cuts = tuple(tuple(sorted((int(i), int(j)))) for i, j in self.cut_couplings)
            object.__setattr__(self, "cut_couplings", cuts)

    def block_of(self) -> dict[int, int]:
        return {q: b for b, qs in enumerate(self.blocks) for q in qs}

    def validate(self, sys: SpinSystem) -> tuple[tuple[int, int], ...]:
        """Check the partition against ``sys`` and return the cut pairs."""
        flat = [q for b in self.blocks for q in b]
        if sorted(flat) != list(range(sys.n)):
            raise ValueError(f"blocks {self.blocks} do not partition {sys.n} qubits")
        owner = self.block_of()
        inter = [(i, j) for i in range(sys.n) for j in range(i + 1, sys.n)
                 if owner[i] != owner[j]]
        if self.cut_couplings is None:
            return tuple((i, j) for i, j in inter if sys.J[i, j] != 0)
        for i, j in self.cut_couplings:
            if not (0 <= i < sys.n and 0 <= j < sys.n) or owner[i] == owner[j]:
                raise ValueError(f"cut pair ({i}, {j}) does not span two blocks")
        missing = [(i, j) for i, j in inter
                   if sys.J[i, j] != 0 and (i, j) not in self.cut_couplings]
        if missing:
            raise ValueError(f"coupled inter-block pairs not listed as cut: {missing}")
        return self.cut_couplings


@dataclass
class Projection:
    blocks: list[SpinSystem]
    dropped: list[tuple[int, int, float]]
    partition: SubsystemPartition

    @property
    def max_dropped(self) -> float:
        return max((abs(J) for *_, J in self.dropped), default=0.0)

    def __iter__(self):
        return iter(self.blocks)

    def __len__(self):
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]


def project_system(sys: SpinSystem, partition: SubsystemPartition) -> Projection:
    """Restrict ``sys`` to each block, dropping the cut couplings.

    Block systems keep the full channel layout (channels without qubits in a
    block simply do nothing there) so one pulse drives every block.
    """
    cuts = partition.validate(sys)
    blocks = []
    for qs in partition.blocks:
        idx = np.array(qs)
        blocks.append(SpinSystem(
            nu0=sys.nu0[idx], J=sys.J[np.ix_(idx, idx)], channel=sys.channel[idx],
            gamma_weight=sys.gamma_weight, T2=sys.T2[idx], T1=sys.T1[idx],
            channel_names=sys.channel_names,
            qubit_names=tuple(sys.qubit_names[q] for q in qs),
            allow_empty_channels=True))
    dropped = [(i, j, float(sys.J[i, j])) for i, j in cuts]
    return Projection(blocks, dropped, partition)


def gate_fidelity(U: np.ndarray, V: np.ndarray) -> float:
    """``|tr(V^dagger U)| / d``; 1 iff ``U`` equals ``V`` up to a global phase."""
    U, V = np.asarray(U), np.asarray(V)
    if U.shape != V.shape or U.ndim != 2:
        raise ValueError(f"shape mismatch {U.shape} vs {V.shape}")
    return float(abs(np.vdot(V, U)) / U.shape[0])


@dataclass(frozen=True)
class GateTarget:
    """Per-block target unitaries; the full target is their tensor product."""

    blocks: tuple[tuple[int, ...], ...]
    unitaries: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        blocks = tuple(tuple(b) for b in self.blocks)
        mats = tuple(np.asarray(u, dtype=complex) for u in self.unitaries)
        if len(blocks) != len(mats):
            raise ValueError("one target unitary per block required")
        for b, u in zip(blocks, mats):
            if u.shape != (2 ** len(b),) * 2:
                raise ValueError(f"target for block {b} has shape {u.shape}")
            if not is_unitary(u):
                raise ValueError(f"target for block {b} is not unitary")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "unitaries", mats)

    def full(self) -> np.ndarray:
        return embed_blocks(self.blocks, self.unitaries)


def embed_blocks(blocks: Sequence[Sequence[int]], mats: Sequence[np.ndarray]) -> np.ndarray:
    """Tensor product of block operators placed on their qubits."""
    order = [q for b in blocks for q in b]
    n = len(order)
    K = np.array([[1.0 + 0j]])
    for m in mats:
        K = np.kron(K, m)
    # K's tensor axes follow `order`; move them to natural qubit order
    pos = np.argsort(order)
    T = K.reshape((2,) * (2 * n))
    T = T.transpose(list(pos) + [n + p for p in pos])
    return T.reshape(2 ** n, 2 ** n)


def primitive_unitary(n: int, prims: Sequence[dict], qubit_map: dict[int, int] | None = None
                      ) -> np.ndarray:
    """Compose named primitives in order (first applied first).

    Each primitive is ``{"gate": "identity"}`` or
    ``{"gate": "rotation", "axis": "x"|"y"|"z", "angle": radians, "qubits": [...]}``.
    ``qubit_map`` translates register indices to block-local positions.
    """
    U = np.eye(2 ** n, dtype=complex)
    for p in prims:
        gate = p.get("gate", "rotation")
        if gate == "identity":
            continue
        if gate != "rotation":
            raise ValueError(f"unknown target primitive {gate!r}")
        axis, angle = str(p["axis"]).lower(), float(p["angle"])
        for q in p["qubits"]:
            if axis not in ("x", "y", "z"):
                raise ValueError(f"unknown rotation axis {axis!r}")
            k = qubit_map[q] if qubit_map is not None else int(q)
            U = rotation(n, k, axis, angle) @ U
    return U


class _BlockGate:
    def __init__(self, sys: SpinSystem, target: np.ndarray):
        self.sys = sys
        self.target = target
        self.cache = SliceCache(sys)

    def value_and_grad(self, pulse: ControlPulse, want_grad: bool = True):
        props = self.cache.all_propagators(pulse)
        d = self.sys.dim
        fwd = np.empty_like(props)
        U = np.eye(d, dtype=complex)
        for m in range(pulse.M):
            U = props[m] @ U
            fwd[m] = U
        z = np.vdot(self.target, U)
        phi2 = abs(z) ** 2 / d ** 2
        if not want_grad:
            return phi2, None, np.sqrt(phi2)
        # dz/dB = -i dt tr(sigma X_m V^dag Y_m), Y_m = U_M ... U_{m+1}
        Vd = self.target.conj().T
        grad = np.zeros((pulse.M, pulse.n_channels, 2))
        Y = np.eye(d, dtype=complex)
        for m in range(pulse.M - 1, -1, -1):
            if pulse.opt_mask[m]:
                W = fwd[m] @ Vd @ Y
                dz = -1j * pulse.dt * np.einsum("csij,ji->cs", self.cache.ops, W)
                grad[m] = 2 * (np.conj(z) * dz).real / d ** 2
            Y = Y @ props[m]
        return phi2, grad, np.sqrt(phi2)


def ssgrape_optimize(block_systems: Sequence[SpinSystem], pulse0: ControlPulse,
                     targets: GateTarget, cfg: GrapeConfig,
                     weights: Sequence[float] | None = None,
                     ) -> tuple[ControlPulse, OptimizationReport]:
    """Optimise one pulse for every block target simultaneously.

    The objective is the weighted mean of per-block ``Phi^2``; the report's
    records carry the per-block ``Phi`` values.
    """
    blocks = list(block_systems)
    if len(blocks) != len(targets.unitaries):
        raise ValueError("one target per block system required")
    for s, u in zip(blocks, targets.unitaries):
        if u.shape != (s.dim, s.dim):
            raise ValueError("block target dimension does not match block system")
        if s.n_channels != pulse0.n_channels:
            raise ValueError("block systems must share the pulse's channel layout")
    w = np.ones(len(blocks)) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    gates = [_BlockGate(s, u) for s, u in zip(blocks, targets.unitaries)]

    def objective(pulse):
        return float(sum(wi * g.value_and_grad(pulse, False)[0] for wi, g in zip(w, gates)))

    def gradient(pulse):
        return sum(wi * g.value_and_grad(pulse)[1] for wi, g in zip(w, gates))

    def per_block(pulse):
        return {"block_fidelity": [g.value_and_grad(pulse, False)[2] for g in gates]}

    pulse, report = gradient_ascent(pulse0, objective, gradient, cfg, kind="ssgrape",
                                    extra_fn=per_block)
    report.summary["block_fidelity"] = per_block(pulse)["block_fidelity"]
    return pulse, report


def block_fidelities(block_systems: Sequence[SpinSystem], pulse: ControlPulse,
                     targets: GateTarget) -> list[float]:
    return [gate_fidelity(total_propagator(s, pulse), u)
            for s, u in zip(block_systems, targets.unitaries)]


def full_system_validate(sys_full: SpinSystem, pulse: ControlPulse,
                         targets: GateTarget) -> float:
    """Gate fidelity of the pulse on the uncut register against the product target."""
    V = targets.full()
    if V.shape != (sys_full.dim, sys_full.dim):
        raise ValueError("targets do not cover the full register")
    return gate_fidelity(total_propagator(sys_full, pulse), V)
