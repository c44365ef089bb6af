"""Model-based versus closed-loop optimisation on a distorted device.

Three arms share one pulse skeleton and task:

* ``grape``: optimise on the nominal model, then measure the result on the
  device,
* ``mqfc``: optimise directly against device measurements,
* ``ceiling``: a dephasing-limited reference. The field the device actually
  applied for the closed-loop pulse (distortion folded in) is evaluated
  noiselessly on a distortion-free device that keeps dephasing, then
  polished by noiseless closed-loop steps; the best value seen is reported.
  It estimates how far dephasing alone caps the feedback loop.

Only the harness knows the distortion; the optimisers see a
:class:`~spinopt.device.DeviceHandle`.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .device import DistortionModel, NoiseModel, make_device
from .grape import GrapeConfig, StateTransfer, grape_optimize
from .mqfc import MqfcConfig, measure_fitness, mqfc_optimize
from .propagation import ControlPulse
from .spinsys import PauliDecomposition, SpinSystem


@dataclass
class CompareSettings:
    grape: GrapeConfig = field(default_factory=lambda: GrapeConfig(
        epsilon=1e9, max_iters=300, target_fitness=0.9999))
    mqfc: MqfcConfig = field(default_factory=lambda: MqfcConfig(
        epsilon=5e6, max_iters=20, step_rule="quadratic", target_fitness=1.0))
    eval_repeats: int = 25
    ceiling: bool = True
    ceiling_iters: int = 20

    def echo(self) -> dict:
        d = asdict(self)
        d["grape"] = self.grape.echo()
        d["mqfc"] = self.mqfc.echo()
        return d


def _state(text: str, n: int) -> tuple[np.ndarray, PauliDecomposition]:
    dec = PauliDecomposition.parse(text)
    if dec.n != n:
        raise ValueError(f"state {text!r} acts on {dec.n} qubits, system has {n}")
    return dec.to_matrix(), dec


def compare_arms(nominal: SpinSystem, distortion: DistortionModel, noise: NoiseModel,
                 pulse0: ControlPulse, rho_i: str, target: str,
                 settings: CompareSettings | None = None) -> dict:
    """Run all arms and return a JSON-ready result dictionary."""
    settings = settings or CompareSettings()
    if pulse0.n_channels != nominal.n_channels:
        raise ValueError("pulse and system channel layouts differ")
    rho, _ = _state(rho_i, nominal.n)
    rho_f, tgt = _state(target, nominal.n)
    eval_tag = 1 << 40

    # (a) model-based pulse measured on the device
    t0 = time.perf_counter()
    pulse_g, rep_g = grape_optimize(nominal, pulse0, rho, rho_f, settings.grape)
    dev_eval = make_device(nominal, distortion, noise)
    grape_dev = measure_fitness(dev_eval, pulse_g, rho, tgt,
                                repeats=settings.eval_repeats, tag=eval_tag)
    t_g = time.perf_counter() - t0

    # (b) closed loop on the device
    t0 = time.perf_counter()
    dev = make_device(nominal, distortion, noise)
    pulse_m, rep_m, budget = mqfc_optimize(dev, pulse0, rho, tgt, settings.mqfc)
    mqfc_dev = measure_fitness(dev, pulse_m, rho, tgt,
                               repeats=settings.eval_repeats, tag=eval_tag)
    t_m = time.perf_counter() - t0

    out = {
        "task": {"rho_i": rho_i, "target": target, "n": nominal.n,
                 "M": pulse0.M, "M_opt": int(pulse0.opt_mask.sum()),
                 "duration_s": pulse0.duration},
        "settings": settings.echo(),
        "grape": {
            "trace_model": rep_g.fitness_trace.tolist(),
            "final_model": rep_g.final_fitness,
            "device_fitness": grape_dev,
            "stop_reason": rep_g.stop_reason,
            "seconds": t_g,
        },
        "mqfc": {
            "trace_measured": rep_m.fitness_trace.tolist(),
            "final_model": StateTransfer(nominal, rho, rho_f).fitness(pulse_m),
            "device_fitness": mqfc_dev,
            "budget": budget.as_dict(),
            "device_experiments": dev.experiments,
            "seconds": t_m,
        },
        "margin": mqfc_dev - grape_dev,
    }

    if settings.ceiling:
        t0 = time.perf_counter()
        realized = ControlPulse(distortion.apply(pulse_m.amps, pulse_m.b_max), pulse_m.dt,
                                pulse_m.opt_mask, None, pulse_m.channel_names)
        quiet = make_device(nominal, None, NoiseModel(dephasing=noise.dephasing))
        realized_val = measure_fitness(quiet, realized, rho, tgt)
        cfg = MqfcConfig(epsilon=settings.mqfc.epsilon, max_iters=settings.ceiling_iters,
                         step_rule="quadratic", target_fitness=1.0,
                         opt_qubits=settings.mqfc.opt_qubits)
        _, rep_c, _ = mqfc_optimize(quiet, realized, rho, tgt, cfg)
        trace = rep_c.fitness_trace
        out["ceiling"] = {
            "realized_fitness": realized_val,
            "polish_trace": trace.tolist(),
            "value": float(max(realized_val, trace.max(initial=-np.inf))),
            "seconds": time.perf_counter() - t0,
        }
    return out
