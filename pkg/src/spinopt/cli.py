"""Command-line entry point.

Every command first parses all of its input files, then computes, then
writes into ``--out``. Inputs are never modified. Exit codes: 0 success,
2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .compare import CompareSettings, compare_arms
from .device import DistortionModel, NoiseModel, make_device
from .fileio import (ConfigError, dumps_record, load_device, load_partition,
                     load_spin_system, read_pulse, spin_system_to_dict, write_pulse,
                     write_report, write_yaml, device_to_dict)
from .grape import GrapeConfig, NumericalError, grape_optimize
from .mqfc import MqfcConfig, mqfc_optimize
from .presets import (flagship_distortion, flagship_noise, flagship_skeleton,
                      flagship_system, flagship_task)
from .propagation import evolve
from .seqlab import probe_spectrum
from .spinsys import PauliDecomposition, SpinSystemError
from .ssgrape import (block_fidelities, full_system_validate, project_system,
                      ssgrape_optimize)
from .twirl import (CliffordError, CliffordSpec, DeviceChannel, SamplingPlan,
                    pr0_exact, pr0_sampled, report_fidelity)

log = logging.getLogger("spinopt")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
_CONFIG_ERRORS = (ConfigError, SpinSystemError, CliffordError, ValueError, KeyError,
                  TypeError)


@dataclass
class RunManifest:
    task: str
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    out: str | None = None
    options: dict = field(default_factory=dict)
    version: str = __version__

    def as_dict(self) -> dict:
        return {"task": self.task, "inputs": self.inputs, "seed": self.seed,
                "out": self.out, "options": self.options, "version": self.version}

    def check_inputs(self) -> None:
        for name, path in self.inputs.items():
            if not Path(path).is_file():
                raise ConfigError(f"{name}: no such file {path}")


# ---------------------------------------------------------------- helpers

def _state(text: str, n: int) -> PauliDecomposition:
    try:
        dec = PauliDecomposition.parse(text)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"cannot parse state {text!r}: {exc}") from exc
    if dec.n != n:
        raise ConfigError(f"state {text!r} acts on {dec.n} qubits, system has {n}")
    return dec


def _grape_cfg(args, **defaults) -> GrapeConfig:
    kw = dict(defaults)
    for k in ("epsilon", "max_iters", "target_fitness", "step_rule"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    return GrapeConfig(**kw)


def _mqfc_cfg(args, **defaults) -> MqfcConfig:
    kw = dict(defaults)
    for k in ("epsilon", "max_iters", "target_fitness", "step_rule"):
        v = getattr(args, k, None)
        if v is not None:
            kw[k] = v
    if getattr(args, "opt_qubits", None):
        kw["opt_qubits"] = tuple(int(q) for q in args.opt_qubits.split(","))
    return MqfcConfig(**kw)


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeded(noise: NoiseModel, seed: int | None) -> NoiseModel:
    if seed is None:
        return noise
    return NoiseModel(**{**noise.__dict__, "seed": seed})


def _check_layout(sys_, pulse):
    if pulse.n_channels != sys_.n_channels:
        raise ConfigError(f"pulse has {pulse.n_channels} channels, system has "
                          f"{sys_.n_channels}")


# ---------------------------------------------------------------- commands

def cmd_optimize(args) -> int:
    if args.method == "grape":
        man = RunManifest("grape", {"system": args.system, "pulse": args.pulse},
                          args.seed, args.out)
        man.check_inputs()
        sys_ = load_spin_system(args.system)
        pulse0 = read_pulse(args.pulse)
        _check_layout(sys_, pulse0)
        rho_i, tgt = _state(args.rho_i, sys_.n), _state(args.target, sys_.n)
        cfg = _grape_cfg(args)
        man.options = {"rho_i": args.rho_i, "target": args.target, "config": cfg.echo()}
        pulse, rep = grape_optimize(sys_, pulse0, rho_i.to_matrix(), tgt.to_matrix(), cfg)
        extra = []
    elif args.method == "mqfc":
        man = RunManifest("mqfc", {"device": args.device, "pulse": args.pulse},
                          args.seed, args.out)
        man.check_inputs()
        nominal, dist, noise = load_device(args.device)
        pulse0 = read_pulse(args.pulse)
        _check_layout(nominal, pulse0)
        rho_i, tgt = _state(args.rho_i, nominal.n), _state(args.target, nominal.n)
        cfg = _mqfc_cfg(args)
        man.options = {"rho_i": args.rho_i, "target": args.target, "config": cfg.echo()}
        dev = make_device(nominal, dist, _seeded(noise, args.seed))
        pulse, rep, budget = mqfc_optimize(dev, pulse0, rho_i.to_matrix(), tgt, cfg)
        extra = [{"record": "budget", **budget.as_dict()}]
        print(f"experiments: {budget.total} ({budget.per_iteration} per iteration)")
    else:
        man = RunManifest("ssgrape", {"system": args.system, "partition": args.partition,
                                      "pulse": args.pulse}, args.seed, args.out)
        man.check_inputs()
        sys_ = load_spin_system(args.system)
        part, target, weights = load_partition(args.partition)
        pulse0 = read_pulse(args.pulse)
        _check_layout(sys_, pulse0)
        proj = project_system(sys_, part)
        cfg = _grape_cfg(args)
        man.options = {"config": cfg.echo(), "weights": weights}
        pulse, rep = ssgrape_optimize(proj.blocks, pulse0, target, cfg, weights)
        full = full_system_validate(sys_, pulse, target)
        extra = [{"record": "validation",
                  "block_fidelity": block_fidelities(proj.blocks, pulse, target),
                  "full_system_fidelity": full,
                  "dropped_couplings": [list(d) for d in proj.dropped]}]
        print(f"full-system fidelity: {full:.6f}")
    out = _out_dir(args)
    pulse_path = out / f"{man.task}.pulse"
    write_pulse(pulse_path, pulse)
    rep.final_pulse_ref = pulse_path.name
    write_report(out / f"{man.task}_report.jsonl", man.as_dict(), rep.as_records() + extra)
    print(f"{man.task}: final fitness {rep.final_fitness:.6f} after {len(rep.records)} "
          f"iterations ({rep.stop_reason})")
    return EXIT_OK


def cmd_twirl(args) -> int:
    man = RunManifest("twirl", {"circuit": args.circuit, "device": args.device,
                                "pulse": args.pulse}, args.seed, args.out)
    man.check_inputs()
    clifford = CliffordSpec.parse(Path(args.circuit).read_text())
    nominal, dist, noise = load_device(args.device)
    pulse = read_pulse(args.pulse)
    _check_layout(nominal, pulse)
    if clifford.n != nominal.n:
        raise ConfigError(f"circuit acts on {clifford.n} qubits, device has {nominal.n}")
    seed = 0 if args.seed is None else args.seed
    dev = make_device(nominal, dist, _seeded(noise, seed))
    channel = DeviceChannel(dev, pulse)
    plan = SamplingPlan(args.eps_tol, args.delta)
    man.options = {"eps_tol": args.eps_tol, "delta": args.delta, "exact": args.exact}
    if args.exact:
        pr0, N = pr0_exact(channel, clifford), 4 ** clifford.n - 1
    else:
        pr0, N = pr0_sampled(channel, clifford, plan, seed)
    fbar = report_fidelity(pr0, clifford.n)
    rec = {"record": "twirl", "pr0": pr0, "avg_fidelity": fbar, "samples": N,
           "mode": "exact" if args.exact else "sampled", "eps_tol": args.eps_tol,
           "delta": args.delta, "experiments": dev.experiments}
    write_report(_out_dir(args) / "twirl_report.jsonl", man.as_dict(), [rec])
    print(f"Pr(0) = {pr0:.6f}  F_avg = {fbar:.6f}  samples = {N}  "
          f"(eps_tol={args.eps_tol}, delta={args.delta})")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    inputs = {"system": args.system}
    if args.pulse:
        inputs["pulse"] = args.pulse
    man = RunManifest("spectrum", inputs, args.seed, args.out)
    man.check_inputs()
    sys_ = load_spin_system(args.system)
    rho = _state(args.state, sys_.n).to_matrix()
    if args.pulse:
        pulse = read_pulse(args.pulse)
        _check_layout(sys_, pulse)
        rho = evolve(sys_, pulse, rho)
    peaks = probe_spectrum(rho, args.probe, sys_, args.linewidth, args.quadrature)
    lines = ["frequency_Hz,amplitude"] + [f"{p.frequency!r},{p.amplitude!r}" for p in peaks]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _out_dir(args)
        (out / "spectrum.csv").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def run_compare(man: RunManifest, args) -> dict:
    """Load the manifest's inputs and run the three-arm comparison."""
    if "device" in man.inputs:
        nominal, dist, noise = load_device(man.inputs["device"])
        pulse0 = read_pulse(man.inputs["pulse"])
        rho_i, target = args.rho_i, args.target
    else:
        nominal, dist, noise = flagship_system(), flagship_distortion(), flagship_noise()
        pulse0 = flagship_skeleton()
        rho_i, target = flagship_task()
    _check_layout(nominal, pulse0)
    _state(rho_i, nominal.n)
    _state(target, nominal.n)
    noise = _seeded(noise, man.seed)
    settings = CompareSettings()
    g_kw = {k: v for k, v in (("epsilon", args.grape_epsilon),
                              ("max_iters", args.grape_iters)) if v is not None}
    if g_kw:
        settings.grape = GrapeConfig(**{**settings.grape.echo(), **g_kw})
    settings.mqfc = _mqfc_cfg(args, **settings.mqfc.echo())
    settings.ceiling = not args.no_ceiling
    man.options = {"rho_i": rho_i, "target": target, "settings": settings.echo()}
    return compare_arms(nominal, dist, noise, pulse0, rho_i, target, settings)


def cmd_compare(args) -> int:
    inputs = {}
    if args.device or args.pulse:
        if not (args.device and args.pulse and args.rho_i and args.target):
            raise ConfigError("--device needs --pulse, --rho-i and --target")
        inputs = {"device": args.device, "pulse": args.pulse}
    man = RunManifest("compare", inputs, args.seed, args.out)
    man.check_inputs()
    res = run_compare(man, args)
    timing = {k: res[k].pop("seconds") for k in ("grape", "mqfc", "ceiling") if k in res}
    write_report(_out_dir(args) / "compare_report.jsonl", man.as_dict(),
                 [{"record": "compare", **res}])
    print(f"GRAPE (model) pulse on device: {res['grape']['device_fitness']:.4f}")
    print(f"closed-loop pulse on device:   {res['mqfc']['device_fitness']:.4f}")
    if "ceiling" in res:
        print(f"dephasing-only ceiling:        {res['ceiling']['value']:.4f}")
    print(f"margin: {res['margin']:+.4f}   runtime: "
          + ", ".join(f"{k} {v:.1f}s" for k, v in timing.items()))
    return EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.file)
    if not path.is_file():
        raise ConfigError(f"no such file {path}")
    kind = args.kind or _guess_kind(path)
    if kind == "system":
        s = load_spin_system(path)
        print(f"spin system: {s.n} qubits, channels {list(s.channel_names)}")
        print(dumps_record(spin_system_to_dict(s)))
    elif kind == "device":
        nominal, dist, noise = load_device(path)
        print(f"device: {nominal.n} qubits, channels {list(nominal.channel_names)}")
        if args.reveal:
            print(dumps_record(device_to_dict("<nominal>", dist, noise)))
        else:
            print("distortion and noise parameters hidden (use --reveal)")
    elif kind == "pulse":
        p = read_pulse(path)
        print(f"pulse: M={p.M} dt={p.dt!r} channels={list(p.channel_names)} "
              f"optimisable={int(p.opt_mask.sum())} b_max={p.b_max!r}")
    elif kind == "partition":
        part, target, weights = load_partition(path)
        print(f"partition: blocks {[list(b) for b in part.blocks]}, "
              f"cut {part.cut_couplings or 'auto'}")
    elif kind == "circuit":
        c = CliffordSpec.parse(path.read_text())
        print(f"circuit: {c.n} qubits, {len(c.circuit)} gates, Clifford check passed")
    else:
        raise ConfigError(f"unknown file kind {kind!r}")
    return EXIT_OK


def _guess_kind(path: Path) -> str:
    if path.suffix == ".pulse":
        return "pulse"
    if path.suffix in (".circ", ".txt"):
        return "circuit"
    import yaml
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if isinstance(doc, dict):
        if "system" in doc:
            return "device"
        if "blocks" in doc:
            return "partition"
        if "qubits" in doc:
            return "system"
    raise ConfigError(f"{path}: cannot tell what kind of file this is (use --kind)")


def cmd_example(args) -> int:
    """Write the flagship system, device and skeleton as editable files."""
    out = _out_dir(args)
    write_yaml(out / "flagship_system.yaml", spin_system_to_dict(flagship_system()))
    write_yaml(out / "flagship_device.yaml",
               device_to_dict("flagship_system.yaml", flagship_distortion(),
                              flagship_noise()))
    write_pulse(out / "flagship_skeleton.pulse", flagship_skeleton())
    print(f"wrote flagship_system.yaml, flagship_device.yaml, flagship_skeleton.pulse "
          f"to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _common(p: argparse.ArgumentParser, iters=True) -> None:
    p.add_argument("--seed", type=int, default=None, help="noise / sampling seed")
    p.add_argument("--out", default=None, help="output directory")
    if iters:
        p.add_argument("--max-iters", dest="max_iters", type=int, default=None)
        p.add_argument("--epsilon", type=float, default=None, help="gradient step scale")
        p.add_argument("--target-fitness", dest="target_fitness", type=float, default=None)
        p.add_argument("--step-rule", dest="step_rule", default=None,
                       choices=("fixed", "backtracking", "quadratic"))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinopt", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"spinopt {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", help="optimise a pulse")
    osub = opt.add_subparsers(dest="method", required=True)
    g = osub.add_parser("grape", help="model-based state transfer")
    g.add_argument("--system", required=True)
    g.add_argument("--pulse", required=True, help="pulse skeleton / initial guess")
    g.add_argument("--rho-i", dest="rho_i", required=True, help='e.g. "ZIII"')
    g.add_argument("--target", required=True, help='e.g. "ZZZZ"')
    _common(g)
    m = osub.add_parser("mqfc", help="closed-loop state transfer on a device")
    m.add_argument("--device", required=True)
    m.add_argument("--pulse", required=True)
    m.add_argument("--rho-i", dest="rho_i", required=True)
    m.add_argument("--target", required=True)
    m.add_argument("--opt-qubits", dest="opt_qubits", default=None,
                   help="comma separated qubit indices for the inserted rotations")
    _common(m)
    s = osub.add_parser("ssgrape", help="subsystem gate optimisation")
    s.add_argument("--system", required=True)
    s.add_argument("--partition", required=True)
    s.add_argument("--pulse", required=True)
    _common(s)

    tw = sub.add_parser("twirl", help="Clifford average fidelity")
    twsub = tw.add_subparsers(dest="action", required=True)
    te = twsub.add_parser("estimate")
    te.add_argument("--circuit", required=True, help="one gate per line: H q | S q | CNOT c t")
    te.add_argument("--device", required=True)
    te.add_argument("--pulse", required=True)
    te.add_argument("--eps-tol", dest="eps_tol", type=float, default=0.05)
    te.add_argument("--delta", type=float, default=0.01)
    te.add_argument("--exact", action="store_true", help="exhaustive sum (n <= 3)")
    _common(te, iters=False)

    sp = sub.add_parser("spectrum", help="single-probe stick spectrum as CSV")
    sp.add_argument("--system", required=True)
    sp.add_argument("--state", required=True, help='Pauli expression, e.g. "XZ"')
    sp.add_argument("--probe", type=int, required=True)
    sp.add_argument("--pulse", default=None, help="evolve the state under this pulse first")
    sp.add_argument("--linewidth", type=float, default=0.005)
    sp.add_argument("--quadrature", choices=("x", "y"), default="x")
    _common(sp, iters=False)

    cp = sub.add_parser("compare", help="model-based vs closed-loop on a distorted device")
    cp.add_argument("--device", default=None, help="omit to run the built-in flagship task")
    cp.add_argument("--pulse", default=None)
    cp.add_argument("--rho-i", dest="rho_i", default=None)
    cp.add_argument("--target", default=None)
    cp.add_argument("--opt-qubits", dest="opt_qubits", default=None)
    cp.add_argument("--grape-epsilon", dest="grape_epsilon", type=float, default=None)
    cp.add_argument("--grape-iters", dest="grape_iters", type=int, default=None)
    cp.add_argument("--no-ceiling", dest="no_ceiling", action="store_true")
    _common(cp)

    va = sub.add_parser("validate", help="parse a file and echo a summary")
    va.add_argument("file")
    va.add_argument("--kind", choices=("system", "device", "pulse", "partition", "circuit"))
    va.add_argument("--reveal", action="store_true",
                    help="print hidden device distortion and noise parameters")

    ex = sub.add_parser("example", help="write the flagship input files")
    ex.add_argument("--out", default=".")
    return ap


_COMMANDS = {"optimize": cmd_optimize, "twirl": cmd_twirl, "spectrum": cmd_spectrum,
             "compare": cmd_compare, "validate": cmd_validate, "example": cmd_example}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
