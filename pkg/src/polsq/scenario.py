"""
Declarative scenario files.

A scenario is a YAML document. Angles are given in degrees (keys ending in
``_deg``); quadrature variances either linear (``v_plus``) or in dB
(``v_plus_db``). Validation errors carry the line of the offending entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .imperfect import (
    MIN_SHOTS,
    SENSITIVITY_PARAMETERS,
    DetectorPairModel,
    EnvironmentModel,
    dark_clearance_for_excess,
)
from .optics import TARGETS, MeasurementConfig, OpticalElement, ideal_config
from .polcore import TwoModeGaussianState, build_example, from_db

__all__ = [
    "SCHEMA_VERSION",
    "ScenarioError",
    "MeasurementSpec",
    "Scenario",
    "bundled_names",
    "bundled_path",
    "load_scenario",
    "parse_scenario",
]

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class _Doc:
    """YAML data plus the source line of every mapping key and list item."""

    def __init__(self, text, source=None):
        self.source = source
        self.lines = {}
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ScenarioError(f"cannot parse: {exc}", line, source) from None
        if node is None:
            raise ScenarioError("empty scenario", 1, source)
        self._index(node, ())
        self.data = yaml.safe_load(text)

    def _index(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                p = path + (key.value,)
                self._index(value, p)
                self.lines[p] = key.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, item in enumerate(node.value):
                self._index(item, path + (i,))

    def line(self, path):
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def error(self, path, message):
        return ScenarioError(message, self.line(path), self.source)


@dataclass(frozen=True)
class MeasurementSpec:
    config: MeasurementConfig
    mode: str = "analytic"
    shots: int | None = None
    seed: int | None = None


@dataclass
class Scenario:
    name: str
    description: str
    state: TwoModeGaussianState
    chain: list
    detector: DetectorPairModel
    environment: EnvironmentModel
    measurements: list
    phase_sweep: dict | None = None
    sensitivity: dict | None = None
    outputs: dict = field(default_factory=dict)
    resolved: dict = field(default_factory=dict)


def _get(doc, mapping, path, key, kind, default=None, required=False):
    if key not in mapping or mapping[key] is None:
        if required:
            raise doc.error(path, f"missing required key '{key}'")
        return default
    value = mapping[key]
    try:
        if kind is float:
            if isinstance(value, bool):
                raise TypeError
            value = float(value)
            if not math.isfinite(value):
                raise ValueError
        elif kind is int:
            if isinstance(value, bool) or int(value) != value:
                raise TypeError
            value = int(value)
        elif kind is str:
            if not isinstance(value, str):
                raise TypeError
        elif kind is bool:
            if not isinstance(value, bool):
                raise TypeError
    except (TypeError, ValueError):
        raise doc.error(path + (key,),
                        f"'{key}' must be a {kind.__name__}, got {value!r}")
    return value


def _mapping(doc, data, path, key, required=False):
    value = data.get(key)
    if value is None:
        if required:
            raise doc.error(path, f"missing required section '{key}'")
        return None
    if not isinstance(value, dict):
        raise doc.error(path + (key,), f"'{key}' must be a mapping")
    return value


def _check_keys(doc, mapping, path, allowed):
    for key in mapping:
        if key not in allowed:
            raise doc.error(path + (key,), f"unknown key '{key}'")


def _variance(doc, m, path, name, default=None):
    lin, db = m.get(name), m.get(name + "_db")
    if lin is not None and db is not None:
        raise doc.error(path + (name,), f"give either '{name}' or '{name}_db'")
    if db is not None:
        return float(from_db(_get(doc, m, path, name + "_db", float)))
    if lin is not None:
        return _get(doc, m, path, name, float)
    if default is None:
        raise doc.error(path, f"missing '{name}' or '{name}_db'")
    return default


def _complex(doc, m, path, key):
    value = m.get(key, 0.0)
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if isinstance(value, list) and len(value) == 2:
        try:
            return complex(float(value[0]), float(value[1]))
        except (TypeError, ValueError):
            pass
    raise doc.error(path + (key,), f"'{key}' must be a number or [re, im]")


_STATE_KEYS = {"example", "alpha", "v_plus", "v_plus_db", "v_minus",
               "v_minus_db", "phi_deg", "alpha_x", "alpha_y", "cov"}


def _state(doc, data):
    path = ("state",)
    m = _mapping(doc, data, (), "state", required=True)
    _check_keys(doc, m, path, _STATE_KEYS)
    if "example" in m:
        ex = _get(doc, m, path, "example", int)
        if ex not in (1, 2, 3):
            raise doc.error(path + ("example",), "example must be 1, 2 or 3")
        alpha = _get(doc, m, path, "alpha", float, required=True)
        vp = _variance(doc, m, path, "v_plus")
        vm = _variance(doc, m, path, "v_minus", default=1.0 / vp)
        phi = math.radians(_get(doc, m, path, "phi_deg", float, 0.0))
        try:
            state = build_example(ex, vp, vm, alpha, phi)
        except ValueError as exc:
            raise doc.error(path, str(exc))
        resolved = {"example": ex, "alpha": alpha, "v_plus": vp,
                    "v_minus": vm, "phi_deg": math.degrees(phi)}
        return state, resolved
    ax = _complex(doc, m, path, "alpha_x")
    ay = _complex(doc, m, path, "alpha_y")
    cov = m.get("cov", np.eye(4).tolist())
    try:
        state = TwoModeGaussianState(ax, ay, np.array(cov, dtype=float))
    except (ValueError, TypeError) as exc:
        raise doc.error(path + ("cov",), str(exc))
    resolved = {"alpha_x": [ax.real, ax.imag], "alpha_y": [ay.real, ay.imag],
                "cov": np.asarray(state.cov).tolist()}
    return state, resolved


def _chain(doc, data):
    items = data.get("chain") or []
    if not isinstance(items, list):
        raise doc.error(("chain",), "'chain' must be a list of elements")
    out, resolved = [], []
    for i, item in enumerate(items):
        path = ("chain", i)
        if not isinstance(item, dict):
            raise doc.error(path, "chain element must be a mapping")
        kind = _get(doc, item, path, "kind", str, required=True)
        if kind == "loss":
            _check_keys(doc, item, path, {"kind", "eta_x", "eta_y"})
            ex = _get(doc, item, path, "eta_x", float, 1.0)
            ey = _get(doc, item, path, "eta_y", float, ex)
            try:
                out.append(OpticalElement("loss", eta=(ex, ey)))
            except ValueError as exc:
                raise doc.error(path, str(exc))
            resolved.append({"kind": kind, "eta_x": ex, "eta_y": ey})
        elif kind in ("hwp", "qwp", "phase"):
            _check_keys(doc, item, path, {"kind", "angle_deg"})
            deg = _get(doc, item, path, "angle_deg", float, 0.0)
            out.append(OpticalElement(kind, math.radians(deg)))
            resolved.append({"kind": kind, "angle_deg": deg})
        else:
            raise doc.error(path + ("kind",), f"unknown element kind '{kind}'")
    return out, resolved


_DET_KEYS = {"preset", "dc_gain_ratio", "ac_gain_ratio", "dark_clearance_db",
             "dark_excess_db", "saturation_dc", "knee_sharpness",
             "extinction_db"}


def _detector(doc, data):
    path = ("detector",)
    m = _mapping(doc, data, (), "detector") or {}
    _check_keys(doc, m, path, _DET_KEYS)
    preset = _get(doc, m, path, "preset", str, "ideal")
    if preset != "ideal":
        raise doc.error(path + ("preset",), f"unknown detector preset '{preset}'")
    if "dark_clearance_db" in m and "dark_excess_db" in m:
        raise doc.error(path, "give either dark_clearance_db or dark_excess_db")
    dark = _get(doc, m, path, "dark_clearance_db", float)
    excess = _get(doc, m, path, "dark_excess_db", float)
    if excess is not None:
        if excess <= 0:
            raise doc.error(path + ("dark_excess_db",), "must be positive")
        dark = dark_clearance_for_excess(excess)
    kwargs = dict(
        dc_gain_ratio=_get(doc, m, path, "dc_gain_ratio", float, 1.0),
        ac_gain_ratio=_get(doc, m, path, "ac_gain_ratio", float, 1.0),
        dark_noise_db=dark,
        saturation_dc=_get(doc, m, path, "saturation_dc", float),
        knee_sharpness=_get(doc, m, path, "knee_sharpness", float, 4.0),
        extinction_db=_get(doc, m, path, "extinction_db", float),
    )
    try:
        det = DetectorPairModel(**kwargs)
    except ValueError as exc:
        raise doc.error(path, str(exc))
    resolved = dict(kwargs)
    resolved["dark_clearance_db"] = resolved.pop("dark_noise_db")
    return det, resolved


_ENV_KEYS = {"phase_jitter_deg", "hwp_misalignment_deg",
             "qwp_misalignment_deg", "power_fluctuation_rel",
             "phase_offset_deg"}


def _environment(doc, data):
    path = ("environment",)
    m = _mapping(doc, data, (), "environment") or {}
    _check_keys(doc, m, path, _ENV_KEYS)
    deg = {k: _get(doc, m, path, k, float, 0.0) for k in _ENV_KEYS}
    try:
        env = EnvironmentModel(
            phase_jitter_std=math.radians(deg["phase_jitter_deg"]),
            hwp_misalignment=math.radians(deg["hwp_misalignment_deg"]),
            qwp_misalignment=math.radians(deg["qwp_misalignment_deg"]),
            power_fluctuation_rel=deg["power_fluctuation_rel"],
            phase_offset=math.radians(deg["phase_offset_deg"]),
        )
    except ValueError as exc:
        raise doc.error(path, str(exc))
    return env, {k: deg[k] for k in sorted(_ENV_KEYS)}


_MEAS_KEYS = {"target", "mode", "shots", "seed", "hwp_deg", "qwp_deg",
              "channel"}


def _measurements(doc, data, det):
    items = data.get("measurements")
    if not isinstance(items, list) or not items:
        raise doc.error(("measurements",), "measurement list is empty")
    out, resolved = [], []
    for i, item in enumerate(items):
        path = ("measurements", i)
        if not isinstance(item, dict):
            raise doc.error(path, "measurement must be a mapping")
        _check_keys(doc, item, path, _MEAS_KEYS)
        target = _get(doc, item, path, "target", str, required=True)
        if target not in TARGETS:
            raise doc.error(path + ("target",), f"unknown target '{target}'")
        base = ideal_config(target)
        hwp = base.hwp_angle if "hwp_deg" not in item else item["hwp_deg"]
        qwp = base.qwp_angle if "qwp_deg" not in item else item["qwp_deg"]
        if "hwp_deg" in item and hwp is not None:
            hwp = math.radians(_get(doc, item, path, "hwp_deg", float))
        if "qwp_deg" in item and qwp is not None:
            qwp = math.radians(_get(doc, item, path, "qwp_deg", float))
        channel = _get(doc, item, path, "channel", str, base.channel)
        try:
            config = MeasurementConfig(target, hwp, qwp, channel, det)
        except ValueError as exc:
            raise doc.error(path, str(exc))
        mode = _get(doc, item, path, "mode", str, "analytic")
        if mode not in ("analytic", "monte_carlo"):
            raise doc.error(path + ("mode",), f"unknown mode '{mode}'")
        shots = seed = None
        if mode == "monte_carlo":
            shots = _get(doc, item, path, "shots", int, 100_000)
            if shots < MIN_SHOTS:
                raise doc.error(path + ("shots",),
                                f"monte carlo needs at least {MIN_SHOTS} shots")
            seed = _get(doc, item, path, "seed", int)
            if seed is None:
                raise doc.error(path, "monte carlo measurement needs a 'seed'")
        out.append(MeasurementSpec(config, mode, shots, seed))
        resolved.append({
            "target": target, "mode": mode, "shots": shots, "seed": seed,
            "hwp_deg": None if hwp is None else math.degrees(hwp),
            "qwp_deg": None if qwp is None else math.degrees(qwp),
            "channel": channel,
        })
    return out, resolved


def _grid(doc, m, path, key, to_rad):
    value = m.get(key)
    p = path + (key,)
    if isinstance(value, dict):
        try:
            start, stop = float(value["start"]), float(value["stop"])
            num = int(value["num"])
        except (KeyError, TypeError, ValueError):
            raise doc.error(p, "grid needs numeric start, stop and num")
        if num < 1:
            raise doc.error(p, "grid needs at least one point")
        values = np.linspace(start, stop, num).tolist()
    elif isinstance(value, list) and value:
        try:
            values = [float(v) for v in value]
        except (TypeError, ValueError):
            raise doc.error(p, "grid entries must be numbers")
    else:
        raise doc.error(p, f"'{key}' must be a list or a start/stop/num mapping")
    return values, [math.radians(v) if to_rad else v for v in values]


def _phase_sweep(doc, data):
    path = ("phase_sweep",)
    m = _mapping(doc, data, (), "phase_sweep")
    if m is None:
        return None, None
    _check_keys(doc, m, path, {"target", "phi_deg"})
    target = _get(doc, m, path, "target", str, required=True)
    if target not in TARGETS:
        raise doc.error(path + ("target",), f"unknown target '{target}'")
    deg, rad = _grid(doc, m, path, "phi_deg", True)
    return ({"target": target, "phi": rad},
            {"target": target, "phi_deg": deg})


def _sensitivity(doc, data):
    path = ("sensitivity",)
    m = _mapping(doc, data, (), "sensitivity")
    if m is None:
        return None, None
    _check_keys(doc, m, path, {"parameter", "grid", "grid_deg", "targets"})
    param = _get(doc, m, path, "parameter", str, required=True)
    if param not in SENSITIVITY_PARAMETERS:
        raise doc.error(path + ("parameter",), f"unknown parameter '{param}'")
    angular = param in ("hwp", "qwp", "jitter")
    key = "grid_deg" if angular else "grid"
    if key not in m:
        raise doc.error(path, f"parameter '{param}' needs '{key}'")
    raw, values = _grid(doc, m, path, key, angular)
    targets = m.get("targets") or []
    if not isinstance(targets, list) or not targets:
        raise doc.error(path + ("targets",), "'targets' must be a list")
    for t in targets:
        if t not in TARGETS:
            raise doc.error(path + ("targets",), f"unknown target '{t}'")
    return ({"parameter": param, "grid": values, "targets": list(targets)},
            {"parameter": param, key: raw, "targets": list(targets)})


_TOP_KEYS = {"schema_version", "name", "description", "state", "chain",
             "detector", "environment", "measurements", "phase_sweep",
             "sensitivity", "outputs"}


def parse_scenario(text, source=None):
    """Validate scenario text and resolve it into model objects."""
    doc = _Doc(text, source)
    data = doc.data
    if not isinstance(data, dict):
        raise doc.error((), "scenario must be a mapping")
    _check_keys(doc, data, (), _TOP_KEYS)
    version = _get(doc, data, (), "schema_version", int, SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise doc.error(("schema_version",),
                        f"unsupported schema version {version}")
    name = _get(doc, data, (), "name", str)
    if name is None:
        name = Path(source).stem if source else "scenario"
    description = _get(doc, data, (), "description", str, "")

    state, r_state = _state(doc, data)
    chain, r_chain = _chain(doc, data)
    det, r_det = _detector(doc, data)
    env, r_env = _environment(doc, data)
    meas, r_meas = _measurements(doc, data, det)
    sweep, r_sweep = _phase_sweep(doc, data)
    sens, r_sens = _sensitivity(doc, data)
    outputs = _mapping(doc, data, (), "outputs") or {}
    _check_keys(doc, outputs, ("outputs",), {"dir", "breakdown"})
    outputs = {
        "dir": _get(doc, outputs, ("outputs",), "dir", str),
        "breakdown": _get(doc, outputs, ("outputs",), "breakdown", bool, True),
    }

    resolved = {
        "schema_version": SCHEMA_VERSION,
        "name": name,
        "description": description,
        "state": r_state,
        "chain": r_chain,
        "detector": r_det,
        "environment": r_env,
        "measurements": r_meas,
    }
    if r_sweep is not None:
        resolved["phase_sweep"] = r_sweep
    if r_sens is not None:
        resolved["sensitivity"] = r_sens
    resolved["outputs"] = outputs
    return Scenario(name, description, state, chain, det, env, meas, sweep,
                    sens, outputs, resolved)


def bundled_names():
    root = resources.files("polsq") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".yaml"))


def bundled_path(name):
    return resources.files("polsq") / "scenarios" / f"{name}.yaml"


def load_scenario(ref):
    """Load a scenario from a file path or a bundled scenario name."""
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text(), str(path))
    if ref in bundled_names():
        res = bundled_path(ref)
        return parse_scenario(res.read_text(), f"<bundled>/{ref}.yaml")
    raise ScenarioError(f"no scenario file or bundled scenario named '{ref}'")
