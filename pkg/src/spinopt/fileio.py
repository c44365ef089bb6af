"""Configuration, pulse and report files.

* spin systems, devices and partitions are YAML documents with a fixed set
  of keys; anything unknown is an error,
* pulses are line-oriented text written with ``repr`` floats so a
  write/read cycle is bit-exact,
* reports are JSON lines preceded by a single ``#`` timestamp header, which
  is the only non-deterministic line.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
import os
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .device import DistortionModel, NoiseModel
from .propagation import ControlPulse
from .spinsys import SpinSystem, SpinSystemError

PULSE_MAGIC = "# spinopt pulse v1"
REPORT_SCHEMA = "spinopt-report/1"


class ConfigError(ValueError):
    """Malformed input file; message carries the file and field or line."""


# ---------------------------------------------------------------- helpers

def _load_yaml(path) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"{path}:{where} invalid YAML: {exc}") from exc


def _mapping(obj, where: str, allowed: set[str], required: set[str] = frozenset()
             ) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a mapping")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    missing = sorted(required - set(obj))
    if missing:
        raise ConfigError(f"{where}: missing key(s) {missing}")
    return obj


def _num(v, where: str) -> float:
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", ".inf"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    return float(v)


# ---------------------------------------------------------------- spin system

_SYS_KEYS = {"n", "qubits", "channels", "couplings", "J"}
_QUBIT_KEYS = {"name", "freq", "channel", "T1", "T2"}
_CHANNEL_KEYS = {"offset", "gamma"}


def spin_system_from_dict(doc: dict, where: str = "system") -> SpinSystem:
    """Build a :class:`SpinSystem` from the YAML schema.

    ``freq`` is in Hz relative to the lab reference; the rotating-frame
    frequency is ``freq - channels[channel].offset``. Couplings are given as
    ``[i, j, J_Hz]`` triples (indices or qubit names) or as a full ``J``
    matrix.
    """
    _mapping(doc, where, _SYS_KEYS, {"qubits", "channels"})
    chans = _mapping(doc["channels"], f"{where}.channels", set(doc["channels"] or {}))
    if not chans:
        raise ConfigError(f"{where}.channels: at least one channel required")
    ch_names = list(chans)
    offsets, gammas = [], []
    for name in ch_names:
        c = _mapping(chans[name] or {}, f"{where}.channels.{name}", _CHANNEL_KEYS)
        offsets.append(_num(c.get("offset", 0.0), f"{where}.channels.{name}.offset"))
        gammas.append(_num(c.get("gamma", 1.0), f"{where}.channels.{name}.gamma"))

    qubits = doc["qubits"]
    if not isinstance(qubits, list) or not qubits:
        raise ConfigError(f"{where}.qubits: expected a non-empty list")
    if "n" in doc and doc["n"] != len(qubits):
        raise ConfigError(f"{where}.n: {doc['n']} does not match {len(qubits)} qubits")
    names, nu0, channel, T1, T2 = [], [], [], [], []
    for k, q in enumerate(qubits):
        w = f"{where}.qubits[{k}]"
        _mapping(q, w, _QUBIT_KEYS, {"freq", "channel"})
        if q["channel"] not in chans:
            raise ConfigError(f"{w}.channel: unknown channel {q['channel']!r}")
        c = ch_names.index(q["channel"])
        names.append(str(q.get("name", f"q{k}")))
        nu0.append(_num(q["freq"], f"{w}.freq") - offsets[c])
        channel.append(c)
        T1.append(_num(q.get("T1", math.inf), f"{w}.T1"))
        T2.append(_num(q.get("T2", math.inf), f"{w}.T2"))
    if len(set(names)) != len(names):
        raise ConfigError(f"{where}.qubits: duplicate qubit names")

    n = len(qubits)
    if "J" in doc and "couplings" in doc:
        raise ConfigError(f"{where}: give either 'couplings' or 'J', not both")
    if "J" in doc:
        try:
            J = np.array(doc["J"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}.J: not a numeric matrix") from exc
    else:
        J = np.zeros((n, n))
        seen: dict[tuple[int, int], float] = {}
        for k, trip in enumerate(doc.get("couplings") or []):
            w = f"{where}.couplings[{k}]"
            if not isinstance(trip, list) or len(trip) != 3:
                raise ConfigError(f"{w}: expected [i, j, J_Hz]")
            i, j = (_qubit_index(x, names, f"{w}") for x in trip[:2])
            val = _num(trip[2], w)
            if i == j:
                raise ConfigError(f"{w}: self-coupling of qubit {i}")
            key = (min(i, j), max(i, j))
            if key in seen and seen[key] != val:
                raise ConfigError(f"{w}: J is not symmetric for pair ({i}, {j}): "
                                  f"{seen[key]} vs {val}")
            seen[key] = val
            J[i, j] = J[j, i] = val
    try:
        return SpinSystem(nu0=nu0, J=J, channel=channel, gamma_weight=gammas, T2=T2, T1=T1,
                          channel_names=tuple(ch_names), qubit_names=tuple(names))
    except (SpinSystemError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _qubit_index(x, names, where):
    if isinstance(x, int) and not isinstance(x, bool):
        if not 0 <= x < len(names):
            raise ConfigError(f"{where}: qubit index {x} out of range")
        return x
    if isinstance(x, str) and x in names:
        return names.index(x)
    raise ConfigError(f"{where}: unknown qubit {x!r}")


def spin_system_to_dict(sys: SpinSystem) -> dict:
    doc = {
        "n": sys.n,
        "channels": {name: {"offset": 0.0, "gamma": float(g)}
                     for name, g in zip(sys.channel_names, sys.gamma_weight)},
        "qubits": [],
        "couplings": [],
    }
    for k in range(sys.n):
        doc["qubits"].append({
            "name": sys.qubit_names[k], "freq": float(sys.nu0[k]),
            "channel": sys.channel_names[sys.channel[k]],
            "T1": _yaml_float(sys.T1[k]), "T2": _yaml_float(sys.T2[k])})
    for i in range(sys.n):
        for j in range(i + 1, sys.n):
            if sys.J[i, j] != 0:
                doc["couplings"].append([i, j, float(sys.J[i, j])])
    return doc


def _yaml_float(x: float):
    return "inf" if math.isinf(x) else float(x)


def load_spin_system(path) -> SpinSystem:
    return spin_system_from_dict(_load_yaml(path), str(path))


def write_yaml(path, doc: dict) -> None:
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))


# ---------------------------------------------------------------- device

_DEVICE_KEYS = {"system", "distortion", "noise"}
_DIST_KEYS = {"amp_scale", "amp_compress", "b_ref", "freq_offset", "j_scale"}
_NOISE_KEYS = {"dephasing", "rotation_error", "readout_sigma", "shots", "seed",
               "readout_gain"}


def load_device(path) -> tuple[SpinSystem, DistortionModel, NoiseModel]:
    """Nominal system, hidden distortion and noise from a device description.

    ``system`` is either a path (relative to the device file) or an inline
    spin-system mapping.
    """
    path = Path(path)
    doc = _mapping(_load_yaml(path), str(path), _DEVICE_KEYS, {"system"})
    ref = doc["system"]
    if isinstance(ref, str):
        nominal = load_spin_system(path.parent / ref)
    else:
        nominal = spin_system_from_dict(ref, f"{path}.system")
    d = _mapping(doc.get("distortion") or {}, f"{path}.distortion", _DIST_KEYS)
    nz = _mapping(doc.get("noise") or {}, f"{path}.noise", _NOISE_KEYS)
    try:
        dist = DistortionModel(**d)
        dist.apply(np.zeros((1, nominal.n_channels, 2)), 1.0)
        dist.true_system(nominal)
        noise = NoiseModel(**nz)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return nominal, dist, noise


def device_to_dict(system_ref: str | dict, distortion: DistortionModel,
                   noise: NoiseModel) -> dict:
    def plain(v):
        if isinstance(v, (list, tuple, np.ndarray)):
            return [float(x) for x in v]
        return v
    return {
        "system": system_ref,
        "distortion": {k: plain(getattr(distortion, k)) for k in sorted(_DIST_KEYS)},
        "noise": {k: getattr(noise, k) for k in sorted(_NOISE_KEYS)},
    }


# ---------------------------------------------------------------- pulse

def write_pulse(path, pulse: ControlPulse) -> None:
    lines = [
        PULSE_MAGIC,
        f"channels: {' '.join(pulse.channel_names)}",
        f"M: {pulse.M}",
        f"dt: {pulse.dt!r}",
        f"b_max: {pulse.b_max!r}" if pulse.b_max is not None else "b_max: none",
    ]
    for m in range(pulse.M):
        lines.append(" ".join(repr(float(v)) for v in pulse.amps[m].reshape(-1)))
    lines.append("mask: " + "".join("1" if b else "0" for b in pulse.opt_mask))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pulse(path) -> ControlPulse:
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    if not raw or raw[0].strip() != PULSE_MAGIC:
        raise ConfigError(f"{path}:1: missing header {PULSE_MAGIC!r}")
    header: dict[str, str] = {}
    pos = 1
    for key in ("channels", "M", "dt", "b_max"):
        if pos >= len(raw):
            raise ConfigError(f"{path}: truncated header")
        k, _, v = raw[pos].partition(":")
        if k.strip() != key:
            raise ConfigError(f"{path}:{pos + 1}: expected '{key}:' got {raw[pos]!r}")
        header[key] = v.strip()
        pos += 1
    names = tuple(header["channels"].split())
    try:
        M = int(header["M"])
        dt = float(header["dt"])
        b_max = None if header["b_max"] == "none" else float(header["b_max"])
    except ValueError as exc:
        raise ConfigError(f"{path}: bad header value: {exc}") from exc
    C = len(names)
    amps = np.zeros((M, C, 2))
    for m in range(M):
        lineno = pos + m + 1
        if pos + m >= len(raw) or raw[pos + m].startswith("mask:"):
            raise ConfigError(f"{path}:{lineno}: expected {M} slice records, found {m}")
        fields = raw[pos + m].split()
        if len(fields) != 2 * C:
            raise ConfigError(f"{path}:{lineno}: expected {2 * C} values, got {len(fields)}")
        try:
            amps[m] = np.array([float(f) for f in fields]).reshape(C, 2)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from exc
    pos += M
    tail = [r for r in raw[pos:] if r.strip()]
    if len(tail) != 1 or not tail[0].startswith("mask:"):
        raise ConfigError(f"{path}:{pos + 1}: expected a single 'mask:' line after "
                          f"{M} slice records")
    bits = tail[0].partition(":")[2].strip()
    if len(bits) != M or set(bits) - {"0", "1"}:
        raise ConfigError(f"{path}:{pos + 1}: mask must be {M} characters of 0/1")
    try:
        return ControlPulse(amps, dt, np.array([b == "1" for b in bits]), b_max, names)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------- partition

_PART_KEYS = {"blocks", "cut_couplings", "targets", "weights"}
_PRIM_KEYS = {"gate", "axis", "angle", "qubits"}


def load_partition(path):
    """Partition plus per-block primitive targets.

    ``targets`` is a list (one entry per block) of primitive lists; angles
    are in degrees.
    """
    from .ssgrape import GateTarget, SubsystemPartition, primitive_unitary
    path = Path(path)
    doc = _mapping(_load_yaml(path), str(path), _PART_KEYS, {"blocks", "targets"})
    blocks = doc["blocks"]
    if not isinstance(blocks, list) or not all(isinstance(b, list) for b in blocks):
        raise ConfigError(f"{path}.blocks: expected a list of qubit lists")
    targets = doc["targets"]
    if not isinstance(targets, list) or len(targets) != len(blocks):
        raise ConfigError(f"{path}.targets: need one primitive list per block")
    mats = []
    for b, (qs, prims) in enumerate(zip(blocks, targets)):
        where = f"{path}.targets[{b}]"
        local = {q: k for k, q in enumerate(qs)}
        conv = []
        for p_i, p in enumerate(prims or []):
            w = f"{where}[{p_i}]"
            _mapping(p, w, _PRIM_KEYS, {"gate"})
            if p["gate"] == "rotation":
                _mapping(p, w, _PRIM_KEYS, {"axis", "angle", "qubits"})
                bad = [q for q in p["qubits"] if q not in local]
                if bad:
                    raise ConfigError(f"{w}: qubits {bad} not in block {qs}")
                conv.append({"gate": "rotation", "axis": p["axis"], "qubits": p["qubits"],
                             "angle": math.radians(_num(p["angle"], f"{w}.angle"))})
            elif p["gate"] == "identity":
                conv.append({"gate": "identity"})
            else:
                raise ConfigError(f"{w}.gate: unknown primitive {p['gate']!r}")
        try:
            mats.append(primitive_unitary(len(qs), conv, local))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"{w}: {exc}") from exc
    try:
        part = SubsystemPartition(tuple(tuple(b) for b in blocks),
                                  None if doc.get("cut_couplings") is None
                                  else tuple(tuple(c) for c in doc["cut_couplings"]))
        target = GateTarget(part.blocks, tuple(mats))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return part, target, doc.get("weights")


# ---------------------------------------------------------------- reports

def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def dumps_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, default=_json_default, allow_nan=True)


def write_report(path, manifest: dict, records: list[dict],
                 timestamp: str | None = None) -> None:
    """Header line with the timestamp, then the manifest and one record per line."""
    ts = timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    lines = [f"# generated {ts}",
             dumps_record({"record": "manifest", "schema": REPORT_SCHEMA, **manifest})]
    lines += [dumps_record(r) for r in records]
    tmp = Path(str(path) + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_report(path) -> list[dict]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#") or not line.strip():
            continue
        out.append(json.loads(line))
    return out
