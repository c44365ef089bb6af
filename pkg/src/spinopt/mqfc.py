"""Closed-loop pulse optimisation from device measurements.

Fitness and gradient are both read off the device. The gradient uses the
identity ``[sigma, rho] = i (R(rho) - Rbar(rho))``, with ``R``/``Rbar`` local
+-pi/2 rotations: each gradient component is ``dt`` times the difference of
two fitness measurements with the rotation inserted after the slice. This
module only talks to a :class:`~spinopt.device.DeviceHandle`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .device import DeviceHandle, ExperimentSpec, Insertion
from .grape import GrapeConfig, OptimizationReport, gradient_ascent
from .propagation import ControlPulse
from .spinsys import PauliDecomposition, PauliString, check_state, state_norm


@dataclass
class MqfcConfig(GrapeConfig):
    """Closed-loop settings.

    ``opt_qubits`` selects where the +-pi/2 insertions go (all qubits when
    None). Noisy fitness makes backtracking unreliable, so only the
    ``"fixed"`` and ``"quadratic"`` rules are accepted; each line-search probe
    is averaged over ``probe_repeats`` measurements. Plateau stopping is off
    by default for the same reason.
    """

    step_rule: str = "fixed"
    plateau_tol: float | None = None
    opt_qubits: tuple[int, ...] | None = None
    probe_repeats: int = 1

    def __post_init__(self):
        super().__post_init__()
        if self.step_rule not in ("fixed", "quadratic"):
            raise ValueError("closed-loop step_rule must be 'fixed' or 'quadratic'")
        if self.opt_qubits is not None:
            if not len(self.opt_qubits):
                raise ValueError("opt_qubits must be non-empty")
            self.opt_qubits = tuple(sorted(set(int(q) for q in self.opt_qubits)))
        if self.probe_repeats < 1:
            raise ValueError("probe_repeats must be >= 1")

    def qubits(self, n: int) -> tuple[int, ...]:
        qs = tuple(range(n)) if self.opt_qubits is None else self.opt_qubits
        if any(not 0 <= q < n for q in qs):
            raise ValueError(f"opt_qubits {qs} out of range for {n} qubits")
        return qs


@dataclass(frozen=True)
class ExperimentBudget:
    """Experiment accounting for one closed-loop run.

    ``per_iteration = 4 n_opt M_opt G + G`` (plus line-search probes when the
    quadratic rule is used).
    """

    n_opt: int
    M_opt: int
    G: int
    line_search: int = 0
    iterations: int = 0
    terminal: int = 0
    total: int = 0

    @property
    def gradient_experiments(self) -> int:
        return 4 * self.n_opt * self.M_opt * self.G

    @property
    def per_iteration(self) -> int:
        return self.gradient_experiments + self.G + self.line_search

    @property
    def expected_total(self) -> int:
        return self.iterations * self.per_iteration + self.terminal * self.G

    def as_dict(self) -> dict:
        return {
            "n_opt": self.n_opt, "M_opt": self.M_opt, "G": self.G,
            "per_iteration": self.per_iteration, "line_search": self.line_search,
            "iterations": self.iterations, "terminal_evaluations": self.terminal,
            "total": self.total, "expected_total": self.expected_total,
        }


def _normaliser(target: PauliDecomposition, rho_i, normalize: bool, dim: int) -> float:
    """Maps ``sum_g x_g <P_g>`` to the (normalised) trace overlap."""
    if normalize:
        # tr(rho_f rho~) = dim * sum x <P>;  ||rho_f|| = sqrt(dim * sum x^2)
        denom = np.sqrt(target.sq_norm() / dim) * state_norm(rho_i)
        if denom == 0:
            raise ValueError("cannot normalise against a zero state")
        return 1.0 / denom
    return float(dim)


def _require_target(target: PauliDecomposition, device: DeviceHandle) -> None:
    if target.G < 1:
        raise ValueError("target decomposition is empty")
    if target.n != device.n:
        raise ValueError(f"target acts on {target.n} qubits, device has {device.n}")


def _combined(device, pulse, rho_i, target, insertion=None, tag=0) -> float:
    """``sum_g x_g <P_g>``, one experiment per Pauli term."""
    total = 0.0
    for t in target:
        spec = ExperimentSpec(pulse, rho_i, PauliDecomposition((PauliString(t.ops),)),
                              insertion, tag)
        total += t.coeff * device.execute(spec)
    return total


def measure_fitness(device: DeviceHandle, pulse: ControlPulse, rho_i,
                    target: PauliDecomposition, normalize: bool = True,
                    repeats: int = 1, tag: int = 0) -> float:
    """Measured ``tr(rho_f rho~)``, normalised like :func:`spinopt.grape.fitness`.

    Issues ``G * repeats`` experiments and averages the repeats.
    """
    _require_target(target, device)
    rho_i = check_state(rho_i, device.dim)
    scale = _normaliser(target, rho_i, normalize, device.dim)
    vals = [_combined(device, pulse, rho_i, target, tag=tag + r) for r in range(repeats)]
    return scale * float(np.mean(vals))


def measure_gradient(device: DeviceHandle, pulse: ControlPulse, rho_i,
                     target: PauliDecomposition, cfg: MqfcConfig, tag: int = 0
                     ) -> np.ndarray:
    """Gradient from ``4 * |opt_qubits| * M_opt * G`` inserted-rotation experiments.

    Returns the same ``(M, n_channels, 2)`` layout as
    :func:`spinopt.grape.analytic_gradient`; each qubit's contribution lands
    on its own channel.
    """
    _require_target(target, device)
    rho_i = check_state(rho_i, device.dim)
    scale = _normaliser(target, rho_i, cfg.normalize, device.dim)
    qubits = cfg.qubits(device.n)
    g = np.zeros((pulse.M, pulse.n_channels, 2))
    for m in pulse.opt_slices:
        for k in qubits:
            c = device.channel[k]
            for a, axis in enumerate("xy"):
                plus = _combined(device, pulse, rho_i, target,
                                 Insertion(k, axis, +1, int(m) + 1), tag)
                minus = _combined(device, pulse, rho_i, target,
                                  Insertion(k, axis, -1, int(m) + 1), tag)
                g[m, c, a] += pulse.dt * scale * (plus - minus)
    return g


def mqfc_optimize(device: DeviceHandle, pulse0: ControlPulse, rho_i,
                  target: PauliDecomposition, cfg: MqfcConfig,
                  ) -> tuple[ControlPulse, OptimizationReport, ExperimentBudget]:
    """Gradient ascent with every fitness and gradient taken from ``device``."""
    _require_target(target, device)
    rho_i = check_state(rho_i, device.dim)
    qubits = cfg.qubits(device.n)
    start = device.experiments
    counter = lambda: device.experiments - start  # noqa: E731

    # fresh tags so repeated measurements of one pulse see independent noise
    calls = iter(range(1, 1 << 62))

    def fit(p):
        return measure_fitness(device, p, rho_i, target, cfg.normalize, tag=next(calls))

    def probe(p):
        return measure_fitness(device, p, rho_i, target, cfg.normalize,
                               repeats=cfg.probe_repeats, tag=next(calls) << 16)

    pulse, report = gradient_ascent(
        pulse0, fit, lambda p: measure_gradient(device, p, rho_i, target, cfg, next(calls)),
        cfg, kind="mqfc", counter=counter, probe_fn=probe)

    steps = sum(r.step is not None for r in report.records)
    line = 3 * target.G * cfg.probe_repeats if cfg.step_rule == "quadratic" else 0
    budget = ExperimentBudget(
        n_opt=len(qubits), M_opt=int(pulse0.opt_mask.sum()), G=target.G,
        line_search=line, iterations=steps,
        terminal=len(report.records) - steps, total=counter())
    report.summary["budget"] = budget.as_dict()
    return pulse, report, budget
