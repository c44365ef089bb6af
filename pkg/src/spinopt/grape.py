"""Open-loop GRAPE: fitness, first-order gradient and the ascent loop.

The ascent loop (:func:`gradient_ascent`) is shared by the closed-loop and
subsystem optimisers; it only sees callables returning a fitness value and
a gradient array, so it never knows whether they come from a simulation or
from a device.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .propagation import ControlPulse, SliceCache, conjugate
from .spinsys import SpinSystem, check_state, single_qubit_op, state_norm

log = logging.getLogger(__name__)

STEP_RULES = ("fixed", "backtracking", "quadratic")


class NumericalError(RuntimeError):
    """Optimisation produced a non-finite fitness or gradient."""


@dataclass
class GrapeConfig:
    """Step-size and stopping rules for gradient ascent.

    ``epsilon`` multiplies the gradient directly: ``B <- B + epsilon * g``.
    With ``step_rule="backtracking"`` a rejected step is shrunk by
    ``shrink`` up to ``max_halvings`` times; ``"quadratic"`` probes the
    fitness at ``epsilon/2, epsilon, 2 epsilon`` and steps to the vertex of
    the fitted parabola, shrinking ``epsilon`` when no probe improves.
    """

    epsilon: float = 1.0
    max_iters: int = 200
    target_fitness: float = 0.999
    step_rule: str = "backtracking"
    shrink: float = 0.5
    max_halvings: int = 12
    normalize: bool = True
    plateau_window: int = 5
    plateau_tol: float | None = 1e-6
    grow: float = 1.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0 < self.target_fitness <= 1:
            raise ValueError("target_fitness must lie in (0, 1]")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")

    def echo(self) -> dict:
        return asdict(self)


@dataclass
class IterationRecord:
    iteration: int
    fitness: float
    grad_norm: float | None = None
    step: float | None = None
    experiments: int | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "extra"}
        d.update(self.extra)
        return d


@dataclass
class OptimizationReport:
    kind: str
    config: dict
    records: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = ""
    final_pulse_ref: str | None = None
    summary: dict = field(default_factory=dict)

    @property
    def fitness_trace(self) -> np.ndarray:
        return np.array([r.fitness for r in self.records])

    @property
    def final_fitness(self) -> float:
        return self.records[-1].fitness if self.records else float("nan")

    def as_records(self) -> list[dict]:
        """One record per iteration, then a summary block."""
        recs = [{"record": "iteration", **r.as_dict()} for r in self.records]
        recs.append({
            "record": "summary",
            "kind": self.kind,
            "iterations": len(self.records),
            "final_fitness": self.final_fitness,
            "stop_reason": self.stop_reason,
            "final_pulse_ref": self.final_pulse_ref,
            "config": self.config,
            **self.summary,
        })
        return recs

    def to_lines(self) -> list[str]:
        """JSON-lines body of :meth:`as_records`."""
        return [json.dumps(r, sort_keys=True, default=_json_default)
                for r in self.as_records()]


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.ndarray, set, tuple)):
        return list(obj.tolist() if isinstance(obj, np.ndarray) else obj)
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def fitness(rho_tilde: np.ndarray, rho_f: np.ndarray, normalize: bool = True,
            rho_ref: np.ndarray | None = None) -> float:
    """Trace overlap ``tr(rho_f rho_tilde)``.

    Normalised, the overlap is divided by ``||rho_f|| ||rho_ref||`` (Frobenius
    norms; ``rho_ref`` defaults to ``rho_tilde``, pass the input state to keep
    non-unitary losses visible). Equal-norm states then give 1 exactly when
    they coincide.
    """
    rho_tilde = check_state(rho_tilde)
    rho_f = check_state(rho_f, rho_tilde.shape[0])
    raw = float(np.vdot(rho_f, rho_tilde).real)
    if not normalize:
        return raw
    ref = rho_tilde if rho_ref is None else rho_ref
    denom = state_norm(rho_f) * state_norm(ref)
    if denom == 0:
        raise ValueError("cannot normalise against a zero state")
    return raw / denom


def gradient_operators(sys: SpinSystem, qubits=None) -> np.ndarray:
    """Per-channel ``sum_k sigma_{x,y}^k`` restricted to ``qubits``."""
    qubits = range(sys.n) if qubits is None else sorted(set(qubits))
    ops = np.zeros((sys.n_channels, 2, sys.dim, sys.dim), dtype=complex)
    for k in qubits:
        if not 0 <= k < sys.n:
            raise ValueError(f"qubit {k} out of range")
        c = sys.channel[k]
        ops[c, 0] += single_qubit_op("X", k, sys.n)
        ops[c, 1] += single_qubit_op("Y", k, sys.n)
    return ops


class StateTransfer:
    """Classical fitness/gradient evaluator for one ``rho_i -> rho_f`` task.

    Keeps the forward pass of the last evaluated pulse so that a fitness
    call followed by a gradient call on the same pulse propagates once.
    """

    def __init__(self, sys: SpinSystem, rho_i, rho_f, normalize: bool = True,
                 qubits=None):
        self.sys = sys
        self.rho_i = check_state(rho_i, sys.dim)
        self.rho_f = check_state(rho_f, sys.dim)
        self.normalize = normalize
        self.cache = SliceCache(sys)
        self.grad_ops = gradient_operators(sys, qubits)
        if normalize:
            scale = state_norm(self.rho_f) * state_norm(self.rho_i)
            if scale == 0:
                raise ValueError("cannot normalise against a zero state")
        else:
            scale = 1.0
        self.scale = scale
        self._key = None
        self._props = None
        self._states = None

    def _forward(self, pulse: ControlPulse):
        key = (pulse.dt, pulse.amps.tobytes())
        if key != self._key:
            props = self.cache.all_propagators(pulse)
            states = np.empty_like(props)
            rho = self.rho_i
            for m in range(pulse.M):
                rho = conjugate(props[m], rho)
                states[m] = rho
            self._key, self._props, self._states = key, props, states
        return self._props, self._states

    def final_state(self, pulse: ControlPulse) -> np.ndarray:
        if pulse.M == 0:
            return self.rho_i
        return self._forward(pulse)[1][-1]

    def fitness(self, pulse: ControlPulse) -> float:
        raw = float(np.vdot(self.rho_f, self.final_state(pulse)).real)
        return raw / self.scale

    def gradient(self, pulse: ControlPulse) -> np.ndarray:
        props, states = self._forward(pulse)
        M = pulse.M
        lam = np.empty_like(states)
        target = self.rho_f
        for m in range(M - 1, -1, -1):
            lam[m] = target
            target = props[m].conj().T @ target @ props[m]
        opt = pulse.opt_mask
        comm = states[opt] @ lam[opt] - lam[opt] @ states[opt]
        # g = tr(-i dt [sigma, rho_m] lam_m) = -i dt tr(sigma [rho_m, lam_m])
        g = np.zeros((M, pulse.n_channels, 2))
        vals = -1j * pulse.dt * np.einsum("csij,mji->mcs", self.grad_ops, comm)
        g[opt] = vals.real
        return g / self.scale


def analytic_gradient(sys: SpinSystem, pulse: ControlPulse, rho_i, rho_f,
                      normalize: bool = True, qubits=None) -> np.ndarray:
    """First-order GRAPE gradient, shape ``(M, n_channels, 2)``.

    ``g[m, c, 0]`` is the derivative with respect to ``Bx`` of channel ``c``
    in slice ``m``; the commutator is taken with the state right after slice
    ``m`` and the target back-propagated through slices ``m+1..M``. Frozen
    slices get zeros. One forward and one backward pass, O(M) products.
    """
    return StateTransfer(sys, rho_i, rho_f, normalize, qubits).gradient(pulse)


def _parabola_step(samples: list[tuple[float, float]], epsilon: float) -> float:
    s = np.array([p[0] for p in samples])
    f = np.array([p[1] for p in samples])
    a, b, _ = np.polyfit(s, f, 2)
    if a < 0:
        vertex = -b / (2 * a)
        return float(np.clip(vertex, 0.0, 4 * epsilon))
    return float(s[np.argmax(f)])


def gradient_ascent(
    pulse0: ControlPulse,
    fitness_fn: Callable[[ControlPulse], float],
    gradient_fn: Callable[[ControlPulse], np.ndarray],
    cfg: GrapeConfig,
    kind: str = "grape",
    counter: Callable[[], int] | None = None,
    probe_fn: Callable[[ControlPulse], float] | None = None,
    extra_fn: Callable[[ControlPulse], dict] | None = None,
) -> tuple[ControlPulse, OptimizationReport]:
    """Iterate ``B <- B + s * g`` until the target, a plateau or ``max_iters``.

    Each iteration records the fitness of the current pulse, stops if it
    meets ``cfg.target_fitness``, otherwise takes one gradient step.
    ``probe_fn`` evaluates trial pulses for the line-search rules (defaults
    to ``fitness_fn``).
    """
    if not pulse0.opt_mask.any():
        raise ValueError("pulse has no optimisable slices")
    probe = probe_fn or fitness_fn
    report = OptimizationReport(kind=kind, config=cfg.echo())
    pulse = pulse0
    f = None
    eps = cfg.epsilon
    stop = "max_iters"
    for it in range(cfg.max_iters):
        if f is None:
            f = fitness_fn(pulse)
        _check_finite(f, it)
        rec = IterationRecord(it, float(f))
        if extra_fn is not None:
            rec.extra.update(extra_fn(pulse))
        report.records.append(rec)
        if f >= cfg.target_fitness:
            stop = "target"
            _stamp(rec, counter)
            break
        if (cfg.plateau_tol is not None and it >= cfg.plateau_window
                and f - report.records[it - cfg.plateau_window].fitness < cfg.plateau_tol):
            stop = "plateau"
            _stamp(rec, counter)
            break

        g = gradient_fn(pulse)
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at iteration {it}")
        rec.grad_norm = float(np.max(np.abs(g))) if g.size else 0.0
        if rec.grad_norm == 0.0:
            rec.step = 0.0
            stop = "zero_gradient"
            _stamp(rec, counter)
            break

        if cfg.step_rule == "fixed":
            s = eps
            pulse = pulse.with_amps(pulse.amps + s * g)
            f = None
        elif cfg.step_rule == "backtracking":
            s = eps
            for _ in range(cfg.max_halvings + 1):
                trial = pulse.with_amps(pulse.amps + s * g)
                f_trial = probe(trial)
                _check_finite(f_trial, it)
                if f_trial >= f:
                    break
                s *= cfg.shrink
            else:
                rec.step = 0.0
                stop = "no_ascent"
                _stamp(rec, counter)
                break
            pulse, f = trial, f_trial
            if s == eps:
                eps *= cfg.grow
        else:
            samples = [(0.0, f)]
            for s_try in (eps / 2, eps, 2 * eps):
                f_try = probe(pulse.with_amps(pulse.amps + s_try * g))
                _check_finite(f_try, it)
                samples.append((s_try, f_try))
            s = _parabola_step(samples, eps)
            if s > 0:
                pulse = pulse.with_amps(pulse.amps + s * g)
            else:
                # every probe was worse: the step scale overshoots
                eps *= cfg.shrink
            f = None
        rec.step = float(s)
        _stamp(rec, counter)
        log.debug("%s iter %d f=%.6f |g|=%.3e step=%.3e", kind, it, rec.fitness,
                  rec.grad_norm, s)
    report.stop_reason = stop
    return pulse, report


def _stamp(rec: IterationRecord, counter) -> None:
    if counter is not None:
        rec.experiments = int(counter())


def _check_finite(f, it: int) -> None:
    if not math.isfinite(f):
        raise NumericalError(f"non-finite fitness at iteration {it}")


def grape_optimize(sys: SpinSystem, pulse0: ControlPulse, rho_i, rho_f,
                   cfg: GrapeConfig) -> tuple[ControlPulse, OptimizationReport]:
    """Classical GRAPE from ``pulse0`` towards ``rho_f``."""
    task = StateTransfer(sys, rho_i, rho_f, cfg.normalize)
    return gradient_ascent(pulse0, task.fitness, task.gradient, cfg, kind="grape")
