"""Run configuration: YAML blocks with unit-suffixed scalars.

Every dimensioned field must carry a unit (``25GHz``, ``60ns``, ``1mW``);
bare numbers are accepted only for dimensionless fields. Missing fields
take the device defaults in :data:`DEFAULTS`. The canonical hash is the
SHA-256 of the fully resolved configuration converted to SI floats, so
formatting, comments, key order and equivalent unit spellings do not
change it.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .bath import BathError, CoolingProtocol, NuclearBath, OverhauserState, sigma_from_t2star, species_by_name
from .cavity import CavityError, CavityParams
from .dynamics import DynamicsError, RamanDrive, ReadoutModel, SpinSystem, calibrate_coupling
from .noise import NoiseError, NoiseSpectrum, calibrate_amplitude
from .sequence.engine import World
from .units import UnitError, parse_phase, parse_quantity

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "SCHEMA", "load_config", "validate_config", "default_config_text"]


class ConfigError(ValueError):
    """Unreadable or invalid configuration; ``path`` names the offending key."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


# block -> key -> kind; kinds are unit dimensions or "int", "bool", "str", "list", "dict", "pair"
SCHEMA: dict[str, dict[str, str]] = {
    "cavity": {
        "finesse": "dimensionless",
        "linewidth": "frequency",
        "mode_splitting": "frequency",
        "mirrors": "pair",
        "resonance_frequency": "frequency",
        "free_spectral_range": "frequency",
    },
    "system": {
        "zeeman": "frequency",
        "g_factor": "dimensionless",
        "b_field": "field",
        "electron_zeeman": "frequency",
        "gamma_x": "rate",
        "gamma_y": "rate",
        "t1": "time",
        "flip_coefficient": "flip_coefficient",
        "temperature": "temperature",
        "stark_offset": "frequency",
    },
    "drive": {
        "detuning": "frequency",
        "power": "power",
        "f_mw": "frequency",
        "phi_mw": "angle",
        "reference_rabi": "frequency",
        "reference_detuning": "frequency",
        "reference_power": "power",
    },
    "bath": {
        "species": "list",
        "abundance": "dict",
        "t2star": "time",
        "mean": "frequency",
        "set_point": "frequency",
        "hh_enabled": "bool",
        "hh_strength": "rate",
        "hh_width": "frequency",
    },
    "noise": {
        "enabled": "bool",
        "beta": "dimensionless",
        "t2_hahn": "time",
        "amplitude": "dimensionless",
        "low_cutoff": "frequency",
        "high_cutoff": "frequency",
        "white_level": "rate",
        "quasistatic_sigma": "frequency",
    },
    "readout": {
        "init_time": "time",
        "rho11_initial": "dimensionless",
        "theta": "dimensionless",
        "diagonal_strength": "dimensionless",
        "detection_scale": "dimensionless",
        "shot_noise": "bool",
    },
    "protocol": {
        "mode": "str",
        "n_cycles": "int",
        "tau_min": "time",
        "tau_max": "time",
        "tc": "time",
        "omega_c": "frequency",
        "readout_len": "time",
        "flip_efficiency": "dimensionless",
        "flip_size": "frequency",
        "repetitions": "int",
        "diffusion": "frequency",
    },
    "simulation": {
        "rwa": "bool",
        "include_flips": "bool",
        "include_t1": "bool",
        "include_bath": "bool",
        "detuning_grid": "frequency",
        "cooling_pool": "int",
    },
    "run": {
        "experiment": "str",
        "sequence": "str",
        "shots": "int",
        "seed": "int",
        "params": "dict",
    },
}

DEFAULTS: dict[str, dict] = {
    "cavity": {"finesse": 500, "linewidth": "25GHz", "mode_splitting": "50GHz", "mirrors": [0.9937168146, 1.0], "resonance_frequency": "324.8THz"},
    "system": {
        "zeeman": "5.8GHz",
        "g_factor": 0.143,
        "b_field": "2.9T",
        "electron_zeeman": "2GHz",
        "gamma_x": "10/ns",
        "gamma_y": "10/ns",
        "t1": "21us",
        "flip_coefficient": "0.5e-4/ns/MHz",
        "temperature": "4.2K",
        "stark_offset": "0Hz",
    },
    "drive": {
        "detuning": "320GHz",
        "power": "1mW",
        "f_mw": "2.9GHz",
        "phi_mw": 0,
        "reference_rabi": "95MHz",
        "reference_detuning": "320GHz",
        "reference_power": "1mW",
    },
    "bath": {
        "species": ["In-115", "As-75", "Ga-69", "Ga-71"],
        "t2star": "28ns",
        "mean": "0Hz",
        "set_point": "0Hz",
        "hh_enabled": True,
        "hh_strength": "5/us",
        "hh_width": "0.5MHz",
    },
    "noise": {"enabled": True, "beta": 0.45, "t2_hahn": "20us", "low_cutoff": "10Hz", "high_cutoff": "100MHz", "white_level": "0/s", "quasistatic_sigma": "0Hz"},
    "readout": {"init_time": "3ns", "rho11_initial": 1.0, "diagonal_strength": 0.45, "detection_scale": 1.0, "shot_noise": False},
    "protocol": {
        "mode": "quantum_sensing",
        "n_cycles": 35,
        "tau_min": "10ns",
        "tau_max": "600ns",
        "tc": "60ns",
        "omega_c": "26MHz",
        "readout_len": "90ns",
        "flip_efficiency": 0.5,
        "flip_size": "0.4MHz",
        "repetitions": 25,
        "diffusion": "0Hz",
    },
    "simulation": {"rwa": True, "include_flips": True, "include_t1": True, "include_bath": True, "detuning_grid": "10kHz", "cooling_pool": 20000},
    "run": {"experiment": "rabi", "shots": 1000, "params": {}},
}


def default_config_text() -> str:
    """The defaults as a YAML document (a valid config file)."""
    return yaml.safe_dump(DEFAULTS, sort_keys=False, default_flow_style=None)


@dataclass
class RunConfig:
    values: dict  # resolved, SI-normalised
    world: World
    experiment_params: dict = field(default_factory=dict)
    config_hash: str = ""

    @property
    def run(self) -> dict:
        return self.values["run"]


def _normalise(kind: str, raw, path: str):
    if raw is None:
        return None
    if kind == "bool":
        if not isinstance(raw, bool):
            raise ConfigError(f"expected true/false, got {raw!r}", path)
        return raw
    if kind == "int":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)) or float(raw) != int(raw):
            raise ConfigError(f"expected an integer, got {raw!r}", path)
        return int(raw)
    if kind == "str":
        return str(raw)
    if kind == "list":
        if isinstance(raw, str):
            raw = [s.strip() for s in raw.split(",") if s.strip()]
        if not isinstance(raw, list):
            raise ConfigError("expected a list", path)
        return [str(x) for x in raw]
    if kind == "dict":
        if not isinstance(raw, dict):
            raise ConfigError("expected a mapping", path)
        return {str(k): v for k, v in raw.items()}
    if kind == "pair":
        if isinstance(raw, str):
            raw = [x for x in raw.replace(",", " ").split()]
        if not isinstance(raw, (list, tuple)) or len(raw) != 2:
            raise ConfigError("expected two values [r1, r2]", path)
        try:
            return [float(x) for x in raw]
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"not numbers: {raw!r}", path) from exc
    if kind == "dimensionless":
        try:
            return float(raw) if not isinstance(raw, str) else parse_quantity(raw, "dimensionless")
        except (UnitError, ValueError) as exc:
            raise ConfigError(str(exc), path) from exc
    if kind == "angle":
        try:
            return float(raw) if isinstance(raw, (int, float)) else parse_phase(str(raw))
        except UnitError as exc:
            raise ConfigError(str(exc), path) from exc
    # dimensioned: units are mandatory, except for an exact zero
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        if raw == 0:
            return 0.0
        raise ConfigError(f"unit required for a {kind} value, got bare number {raw!r}", path)
    try:
        return parse_quantity(str(raw), kind)
    except UnitError as exc:
        raise ConfigError(str(exc), path) from exc


def _merge(base: dict, extra: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for block, items in (extra or {}).items():
        if block not in SCHEMA:
            raise ConfigError(f"unknown block {block!r}; known: {', '.join(SCHEMA)}", prefix + str(block))
        if items is None:
            continue
        if not isinstance(items, dict):
            raise ConfigError("expected a mapping of keys", str(block))
        for key, val in items.items():
            if key not in SCHEMA[block]:
                raise ConfigError(f"unknown key {key!r}", f"{block}.{key}")
            out.setdefault(block, {})[key] = val
    return out


def parse_override(text: str):
    """``block.key=value`` into ``(path, value)``; values are YAML scalars, ``a..b`` ranges stay strings."""
    path, sep, value = text.partition("=")
    path = path.strip()
    if not sep or not path:
        raise ConfigError(f"expected key=value, got {text!r}", "--set")
    value = value.strip()
    if ".." in value and not value.startswith("["):
        return path, value
    try:
        parsed = yaml.safe_load(value) if value else ""
    except yaml.YAMLError:
        parsed = value
    return path, parsed


def _apply_overrides(raw: dict, overrides: list[str], experiment_keys) -> tuple[dict, dict]:
    """Split ``--set`` items into config edits and experiment parameters."""
    raw = copy.deepcopy(raw)
    params = dict((raw.get("run") or {}).get("params") or {})
    for item in overrides or []:
        path, value = parse_override(item)
        parts = path.split(".")
        if parts[0] in ("experiment", "params") and len(parts) == 2:
            params[parts[1]] = value
            continue
        if len(parts) == 2 and parts[0] in SCHEMA and parts[1] in SCHEMA[parts[0]]:
            raw.setdefault(parts[0], {})
            if raw[parts[0]] is None:
                raw[parts[0]] = {}
            raw[parts[0]][parts[1]] = value
            continue
        # e.g. drive.delta_range: not a config field but a parameter of the experiment
        if parts[-1] in experiment_keys(raw):
            params[parts[-1]] = value
            continue
        raise ConfigError(f"unknown setting {path!r}", path)
    raw.setdefault("run", {})
    if raw["run"] is None:
        raw["run"] = {}
    raw["run"]["params"] = params
    return raw, params


def resolve(raw: dict) -> dict:
    """Defaults merged with ``raw`` and every value normalised to SI."""
    merged = _merge(DEFAULTS, raw)
    out: dict[str, dict] = {}
    for block, keys in SCHEMA.items():
        out[block] = {}
        for key, kind in keys.items():
            if key in merged.get(block, {}):
                out[block][key] = _normalise(kind, merged[block][key], f"{block}.{key}")
    return out


def _canonical(v):
    # 12 significant digits absorb unit-conversion rounding (21000 ns vs 21 us)
    if isinstance(v, float):
        return float(f"{v:.12g}")
    if isinstance(v, dict):
        return {k: _canonical(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_canonical(x) for x in v]
    return v


def canonical_hash(values: dict) -> str:
    payload = {b: v for b, v in values.items()}
    payload["run"] = {k: v for k, v in values["run"].items() if k != "seed"}
    payload = _canonical(payload)
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=repr)
    return hashlib.sha256(text.encode()).hexdigest()


def _build(values: dict) -> tuple[World, list[tuple[str, str]]]:
    """World from resolved values, plus invariant violations as ``(path, message)``."""
    bad: list[tuple[str, str]] = []
    c = values["cavity"]
    r1, r2 = c.get("mirrors") or (None, None)
    cavity = CavityParams(
        finesse=c["finesse"],
        linewidth=c["linewidth"],
        mode_splitting=c["mode_splitting"],
        mirror_r1=r1,
        mirror_r2=r2,
        resonance_frequency=c.get("resonance_frequency", 3.248e14),
        free_spectral_range=c.get("free_spectral_range"),
    )
    bad += [(f"cavity.{k}", m) for k, m in cavity.violations()]

    s = values["system"]
    system = SpinSystem(**{k: s[k] for k in SCHEMA["system"] if k in s})
    bad += [(f"system.{k}", m) for k, m in system.violations()]

    d = values["drive"]
    coupling = 3.959e9
    try:
        if not cavity.violations():
            coupling = calibrate_coupling(d["reference_rabi"], d["reference_detuning"], d["reference_power"], cavity)
    except (DynamicsError, CavityError) as exc:
        bad.append(("drive.reference_rabi", str(exc)))
    drive = RamanDrive(detuning=d["detuning"], power=d["power"], f_mw=d["f_mw"], phi_mw=d["phi_mw"], coupling=coupling)
    if d["power"] < 0:
        bad.append(("drive.power", "power must be non-negative"))
    if d["detuning"] == 0:
        bad.append(("drive.detuning", "resonant drive: Delta must be non-zero"))
    elif not cavity.violations() and abs(d["detuning"]) > cavity.fsr / 2:
        bad.append(("drive.detuning", "detuning beyond half a free spectral range"))

    b = values["bath"]
    try:
        species = species_by_name(b["species"])
        weights = b.get("abundance") or {}
        unknown = set(weights) - {sp.name for sp in species}
        if unknown:
            bad.append(("bath.abundance", f"weights for species not enabled: {sorted(unknown)}"))
        species = tuple(replace(sp, abundance_weight=float(weights.get(sp.name, sp.abundance_weight))) for sp in species)
    except BathError as exc:
        bad.append(("bath.species", str(exc)))
        species = ()
    sigma = sigma_from_t2star(b["t2star"]) if b["t2star"] > 0 else 0.0
    if not b["t2star"] > 0:
        bad.append(("bath.t2star", "T2* must be positive"))
    bath = NuclearBath(
        species=species,
        b_field=s["b_field"] if s.get("b_field") is not None else 2.9,
        overhauser=OverhauserState(mean=b["mean"], sigma=sigma, set_point=b["set_point"]),
        hh_strength=b["hh_strength"],
        hh_width=b["hh_width"],
        hh_enabled=b["hh_enabled"],
    )
    bad += [(f"bath.{k}", m) for k, m in bath.violations()]

    n = values["noise"]
    noise = None
    if n["enabled"]:
        try:
            spec = NoiseSpectrum(
                amplitude=n.get("amplitude") or 0.0,
                beta=n["beta"],
                low_cutoff=n["low_cutoff"],
                high_cutoff=n["high_cutoff"],
                white_level=n["white_level"],
                quasistatic_sigma=n["quasistatic_sigma"],
            )
            if n.get("amplitude") is None and n.get("t2_hahn"):
                spec = calibrate_amplitude(spec, n["t2_hahn"])
            noise = spec
        except (NoiseError, ValueError) as exc:
            bad.append(("noise", str(exc)))

    ro = values["readout"]
    readout = ReadoutModel(
        rho11_initial=ro["rho11_initial"],
        theta=ro.get("theta"),
        init_time=ro["init_time"],
        detection_scale=ro["detection_scale"],
        diagonal_strength=ro["diagonal_strength"],
        shot_noise=ro["shot_noise"],
    )
    bad += [(f"readout.{k}", m) for k, m in readout.violations()]

    p = values["protocol"]
    protocol = CoolingProtocol(**{k: p[k] for k in SCHEMA["protocol"] if k in p})
    # "tau" names the ordering invariant; report it against the block
    bad += [("protocol" if k == "tau" else f"protocol.{k}", m) for k, m in protocol.violations()]

    sim = values["simulation"]
    if sim["detuning_grid"] < 0:
        bad.append(("simulation.detuning_grid", "must be non-negative"))
    if sim["cooling_pool"] < 1:
        bad.append(("simulation.cooling_pool", "must be >= 1"))
    run = values["run"]
    if run.get("shots") is not None and run["shots"] < 1:
        bad.append(("run.shots", "shots must be >= 1"))

    world = World(
        cavity=cavity,
        system=system,
        drive=drive,
        bath=bath,
        noise=noise,
        readout=readout,
        protocol=protocol,
        include_flips=sim["include_flips"],
        include_t1=sim["include_t1"],
        include_bath=sim["include_bath"],
        detuning_grid=sim["detuning_grid"],
        cooling_pool=sim["cooling_pool"],
    )
    return world, bad


def _experiment_keys(raw: dict) -> set[str]:
    from .figures import FIGURES
    from .sequence.builtins import BUILTINS

    name = ((raw.get("run") or {}).get("experiment")) or DEFAULTS["run"]["experiment"]
    if name in FIGURES:
        name = FIGURES[name].builtin
    b = BUILTINS.get(name)
    return set(b.defaults) if b else set()


def read_raw(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", str(path)) from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML syntax error: {exc}", str(path)) from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a mapping of blocks", str(path))
    return raw


def validate_config(path=None, overrides: list[str] | None = None) -> list[tuple[str, str]]:
    """All invariant violations as ``(config path, message)``; never runs physics."""
    try:
        raw, _ = _apply_overrides(read_raw(path), overrides or [], _experiment_keys)
        values = resolve(raw)
        _, bad = _build(values)
    except ConfigError as exc:
        return [(exc.path, str(exc).split(": ", 1)[-1])]
    except (TypeError, ValueError, ArithmeticError) as exc:
        return [("", str(exc))]
    return bad


def load_config(path=None, overrides: list[str] | None = None, *, experiment: str | None = None) -> RunConfig:
    """Resolve, validate and build; raises :class:`ConfigError` on any violation."""
    raw = read_raw(path)
    if experiment is not None:
        raw = copy.deepcopy(raw)
        raw.setdefault("run", {})
        raw["run"] = dict(raw["run"] or {}, experiment=experiment)
    raw, params = _apply_overrides(raw, overrides or [], _experiment_keys)
    values = resolve(raw)
    world, bad = _build(values)
    if bad:
        if len(bad) == 1:
            raise ConfigError(bad[0][1], bad[0][0])
        raise ConfigError("; ".join(f"{p}: {m}" for p, m in bad))
    if any(isinstance(v, float) and math.isnan(v) for blk in values.values() for v in blk.values()):
        raise ConfigError("NaN value in configuration")
    return RunConfig(values, world, params, canonical_hash(values))
