"""Built-in experiment protocols, one per measurement, written in the DSL.

Each builtin is a text template plus a table of override keys. Override
values are unit-suffixed strings (``"95MHz"``), SI floats, or two-element
ranges (``("-200MHz", "200MHz")`` or the string ``"-200MHz..200MHz"``).
A raman element without ``omega=`` uses the drive-derived Rabi frequency
of the world it runs in.

:func:`analyze` turns a result of a builtin into its fit report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.signal import hilbert

from ..dynamics import initialization_fidelity
from ..analysis import (
    FitError,
    FitResult,
    fit_damped_oscillation,
    fit_exponential_decay,
    fit_stretched_exponential,
    pi_pulse_fidelity,
)
from .dsl import PulseSequence, parse_sequence
from .engine import element_duration
from .results import ExperimentResult

__all__ = ["BUILTINS", "builtin_experiments", "list_experiments", "analyze", "visibility", "ramsey_pulse_time"]


@dataclass(frozen=True)
class Builtin:
    name: str
    description: str
    defaults: dict
    template: Callable[[dict], str]


def _q(value, unit: str) -> str:
    """Render an override value as a DSL literal."""
    if isinstance(value, str):
        return value.strip()
    return f"{float(value)!r}{unit}"


def _range(value) -> tuple:
    if isinstance(value, str):
        a, sep, b = value.partition("..")
        if not sep:
            raise ValueError(f"expected a range 'a..b', got {value!r}")
        return a, b
    a, b = value
    return a, b


def _omega(p) -> str:
    return "" if p["omega"] in (None, "") else f"omega={_q(p['omega'], 'Hz')}"


def _cool(p) -> str:
    keys = ("n_cycles", "tau_min", "tau_max", "tc", "omega_c", "readout", "efficiency", "flip", "repetitions")
    units = {"tau_min": "s", "tau_max": "s", "tc": "s", "omega_c": "Hz", "readout": "s", "flip": "Hz"}
    parts = [f"{k}={_q(p[k], units.get(k, ''))}" for k in keys if p.get(k) not in (None, "")]
    return "cool " + " ".join(parts)


def _sweep(target, rng, steps, unit) -> str:
    a, b = _range(rng)
    return f"sweep {target} from {_q(a, unit)} to {_q(b, unit)} steps {int(steps)}"


def _rabi(p):
    return "\n".join([
        f"init {_q(p['init'], 's')}",
        f"raman {_omega(p)} delta={_q(p['delta'], 'Hz')} phase=0 t=0ns name=drive",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("drive.t", p["t_range"], p["steps"], "s"),
    ])


def _chevron(p, cooled=False):
    lines = [_cool(p)] if cooled else []
    lines += [
        f"init {_q(p['init'], 's')}",
        f"raman {_omega(p)} delta=0 phase=0 t=0ns name=drive",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("drive.delta", p["delta_range"], p["delta_steps"], "Hz"),
        _sweep("drive.t", p["t_range"], p["t_steps"], "s"),
    ]
    return "\n".join(lines)


def _ramsey(p):
    om = _omega(p)
    d = _q(p["delta"], "Hz")
    lines = [
        f"init {_q(p['init'], 's')}",
        f"raman angle=pi/2 {om} delta={d} phase=0 name=p1",
        "wait 0ns name=free",
        f"raman angle=pi/2 {om} delta={d} phase=0 name=p2",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("free.t", p["t_range"], p["steps"], "s"),
    ]
    if p["interleave"]:
        lines.append("interleave p2.phase 0 pi")
    return "\n".join(lines)


def _echo_body(p, n_pulses):
    om = _omega(p)
    a, b = _range(p["t_range"])
    # constant wall time across the sweep; the padding precedes the pump so
    # relaxation during it is erased by initialisation
    lines = [
        f"let Tmax = {_q(b, 's')}",
        "wait $Tmax-$T",
        f"init {_q(p['init'], 's')}",
        f"raman angle=pi/2 {om} phase=0 name=p1",
    ]
    hahn = n_pulses == 1 and p.get("hahn")
    # Hahn: pi about x; CPMG: pi about y, i.e. microwave phase pi/4
    pi_phase = "phase=0" if hahn else "mwphase=pi/4"
    if n_pulses == 0:
        lines.append("wait $T")
    for _ in range(n_pulses):
        lines += [f"wait $T/{2 * n_pulses}", f"raman angle=pi {om} {pi_phase}", f"wait $T/{2 * n_pulses}"]
    lines += [
        f"raman angle=pi/2 {om} phase=0 name=last",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("T", (a, b), p["steps"], "s"),
        # order the pair so the echo of an ideal sequence reads +1
        "interleave last.phase pi 0" if hahn else "interleave last.phase 0 pi",
    ]
    return "\n".join(lines)


def _t1(p):
    return "\n".join([
        f"init {_q(p['init'], 's')}",
        f"raman angle=pi {_omega(p)} phase=0 name=flip",
        "wait 0ns name=delay",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("delay.t", p["t_range"], p["steps"], "s"),
    ])


def _hh_scan(p):
    return "\n".join([
        f"init {_q(p['init'], 's')}",
        f"raman omega=30MHz delta={_q(p['delta'], 'Hz')} phase=0 t=0ns name=drive",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("drive.omega", p["omega_range"], p["omega_steps"], "Hz"),
        _sweep("drive.t", p["t_range"], p["t_steps"], "s"),
    ])


def _cooling_ramsey(p):
    om = _omega(p)
    mod = _q(p["modulation"], "Hz")
    lines = [
        _cool(p),
        f"init {_q(p['init'], 's')}",
        f"raman angle=pi/2 {om} phase=0 name=p1",
        "wait $tau",
        # artificial modulation: the second pulse phase advances with the delay
        f"raman angle=pi/2 {om} phase=2*pi*{mod}*$tau name=p2",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("tau", p["t_range"], p["steps"], "s"),
    ]
    if p["interleave"]:
        lines.append("interleave p2.phase 0 pi")
    return "\n".join(lines)


def _phase_sweep(p):
    om = _omega(p)
    return "\n".join([
        f"init {_q(p['init'], 's')}",
        f"raman angle=pi/2 {om} mwphase=0 name=p1",
        f"raman angle=pi/2 {om} mwphase=0 name=p2",
        f"readout {_q(p['readout_t'], 's')}",
        _sweep("p2.mwphase", p["phase_range"], p["steps"], "rad"),
    ])


def _init_fidelity(p):
    return f"readout {_q(p['duration'], 's')} mode=trace bins={int(p['bins'])}"


_COMMON = {"init": "30ns", "readout_t": "90ns"}
_COOL = {
    "n_cycles": 35,
    "tau_min": "10ns",
    "tau_max": "600ns",
    "tc": "60ns",
    "omega_c": "26MHz",
    "readout": "90ns",
    "efficiency": None,
    "flip": None,
    "repetitions": None,
}

BUILTINS: dict[str, Builtin] = {}


def _register(name, description, defaults, template):
    BUILTINS[name] = Builtin(name, description, {**_COMMON, **defaults}, template)


_register("rabi", "Rabi oscillation vs pulse length", {"omega": None, "delta": "0Hz", "t_range": ("0ns", "200ns"), "steps": 201}, _rabi)
_register(
    "chevron",
    "Rabi chevron: two-photon detuning x pulse length",
    {"omega": None, "delta_range": ("-200MHz", "200MHz"), "delta_steps": 41, "t_range": ("0ns", "100ns"), "t_steps": 51},
    _chevron,
)
_register(
    "ramsey",
    "Ramsey fringes vs pulse spacing, phase-alternated pairs",
    {"omega": None, "delta": "30MHz", "t_range": ("0ns", "200ns"), "steps": 101, "interleave": True},
    _ramsey,
)
_register(
    "hahn",
    "Hahn echo at constant init-to-readout spacing",
    {"omega": None, "t_range": ("0us", "60us"), "steps": 31},
    lambda p: _echo_body({**p, "hahn": True}, 1),
)
_register(
    "cpmg",
    "CPMG with pi_y pulses (microwave phase pi/4)",
    {"omega": None, "n_pulses": 4, "t_range": ("0us", "100us"), "steps": 31},
    lambda p: _echo_body({**p, "hahn": False}, int(p["n_pulses"])),
)
_register("t1", "Spin relaxation after a pi-pulse", {"omega": None, "t_range": ("0us", "100us"), "steps": 51}, _t1)
_register(
    "hh_scan",
    "Rabi quality factor vs Rabi frequency (flip-flop resonances)",
    {"delta": "0Hz", "omega_range": ("20MHz", "50MHz"), "omega_steps": 31, "t_range": ("0ns", "300ns"), "t_steps": 121},
    _hh_scan,
)
_register(
    "cooling_ramsey",
    "Ramsey after feedback cooling, 10 MHz artificial modulation",
    {"omega": None, "modulation": "10MHz", "t_range": ("0ns", "2us"), "steps": 201, "interleave": True, **_COOL},
    _cooling_ramsey,
)
_register(
    "cooled_chevron",
    "Chevron after feedback cooling",
    {"omega": None, "delta_range": ("-200MHz", "200MHz"), "delta_steps": 41, "t_range": ("0ns", "100ns"), "t_steps": 51, **_COOL},
    lambda p: _chevron(p, cooled=True),
)
_register(
    "phase_sweep",
    "Two pi/2 pulses, second microwave phase swept",
    {"omega": None, "phase_range": ("0", "2pi"), "steps": 73},
    _phase_sweep,
)
_register("init_fidelity", "Optical-pumping transient and initialisation fidelity", {"duration": "20ns", "bins": 200}, _init_fidelity)


def list_experiments() -> list[tuple[str, str]]:
    return [(b.name, b.description) for b in BUILTINS.values()]


def builtin_experiments(name: str, overrides: dict | None = None) -> PulseSequence:
    """Sequence for a named protocol; ``overrides`` replace template defaults."""
    if name not in BUILTINS:
        raise KeyError(f"unknown experiment {name!r}; known: {', '.join(BUILTINS)}")
    b = BUILTINS[name]
    params = dict(b.defaults)
    for k, v in (overrides or {}).items():
        if k not in params:
            raise KeyError(f"experiment {name!r} has no parameter {k!r}; known: {', '.join(sorted(params))}")
        params[k] = v
    return parse_sequence(b.template(params) + "\n")


# -- analysis ---------------------------------------------------------------------------------


def visibility(result: ExperimentResult) -> np.ndarray:
    """Interleaved signal normalised by the bright/dark contrast, so ideal contrast gives 1."""
    bright = float(result.metadata["signal_bright"])
    dark = float(result.metadata["signal_dark"])
    return result.grid() / (0.5 * (bright - dark))


def _summary(model: str, params: dict, flags=()) -> FitResult:
    return FitResult(model, {k: float(v) for k, v in params.items()}, {}, 0.0, True, set(flags))


def _rabi_fits(t, y) -> FitResult:
    fit = fit_damped_oscillation(t, y)
    fit.params["pi_fidelity"] = pi_pulse_fidelity(fit.params["q"])
    return fit


def ramsey_pulse_time(seq: PulseSequence, world) -> float:
    """Duration of the first pi/2 pulse of a Ramsey-type builtin."""
    return element_duration(seq, world, "p1")


def analyze(name: str, result: ExperimentResult, *, pulse_time: float | None = None) -> list[FitResult]:
    """Fit the dataset of a builtin; raises :class:`FitError` when a required fit fails.

    For Ramsey-type builtins, ``pulse_time`` (the pi/2 duration) moves the
    time axis to the effective free-precession time ``tau + 4 t_p / pi``,
    measured between the pulse centres of rotation. Without it, finite
    pulses bias the fitted fringe frequency by a fraction of a percent.
    """
    g = result.grid()
    if name in ("rabi", "t1", "ramsey", "hahn", "cpmg", "phase_sweep", "cooling_ramsey"):
        x = result.axes[0].values
    if name in ("ramsey", "cooling_ramsey") and pulse_time:
        x = x + 4.0 * pulse_time / math.pi
    if name == "rabi":
        return [_rabi_fits(x, g)]
    if name in ("chevron", "cooled_chevron"):
        d = result.axes[0].values
        t = result.axes[1].values
        row = int(np.argmin(np.abs(d)))
        fits = [_rabi_fits(t, g[row])] if len(t) >= 8 else []
        # background modulation: shot-to-shot spread of the far-detuned signal, which a
        # drifting Overhauser field turns into a modulated background; in contrast^2 units
        far = np.abs(d) >= 0.75 * np.max(np.abs(d))
        shots = float(result.metadata.get("shots", 1))
        spread = (result.stderr.reshape(result.shape) ** 2) * shots
        contrast = float(result.metadata["signal_bright"]) - float(result.metadata["signal_dark"])
        late = spread[far][:, len(t) // 2:] if np.any(far) else spread[:, :0]
        modulation = float(late.mean()) / contrast**2 if late.size else 0.0
        fits.append(_summary("chevron_background", {"background_modulation": modulation, "resonance_detuning": d[row]}))
        return fits
    if name == "ramsey":
        v = visibility(result) if result.metadata.get("interleave", "none") != "none" else g
        return [fit_damped_oscillation(x, v, envelope="gaussian")]
    if name in ("hahn", "cpmg"):
        return [fit_stretched_exponential(x, np.clip(visibility(result), -0.05, 1.05))]
    if name == "t1":
        return [fit_exponential_decay(x, g)]
    if name == "hh_scan":
        om = result.axes[0].values
        t = result.axes[1].values
        qs = []
        for k in range(len(om)):
            try:
                qs.append(fit_damped_oscillation(t, g[k])["q"])
            except FitError:
                qs.append(math.nan)
        qs = np.array(qs)
        params = {f"q@{o / 1e6:.3f}MHz": q for o, q in zip(om, qs)}
        finite = np.isfinite(qs)
        if not np.any(finite):
            raise FitError("no Rabi fit converged in the Q scan")
        params["argmin_omega"] = om[finite][np.argmin(qs[finite])]
        return [_summary("q_scan", params)]
    if name == "cooling_ramsey":
        v = visibility(result) if result.metadata.get("interleave", "none") != "none" else g - g.mean()
        osc = fit_damped_oscillation(x, v, envelope="gaussian")
        env = np.abs(hilbert(v - osc.params["offset"]))
        env = np.clip(env / max(env[:3].mean(), 1e-12), 0.0, 1.05)
        return [osc, fit_stretched_exponential(x, env)]
    if name == "phase_sweep":
        y = g - g.mean()
        n = len(x) - 1 if np.isclose(x[-1] - x[0], 2 * np.pi) else len(x)
        spec = np.abs(np.fft.rfft(y[:n]))
        harmonic = int(np.argmax(spec[1:]) + 1)
        return [_summary("phase_periodicity", {"dominant_harmonic": harmonic, "period": 2 * np.pi / harmonic})]
    if name == "init_fidelity":
        t = result.axes[-1].values
        trace = g
        peak = float(trace.max())
        if peak <= 0:
            raise FitError("no emission: I_peak = 0")
        tail = trace[-max(len(trace) // 10, 1):].mean()
        ratio = tail / peak
        decay = fit_exponential_decay(t[np.argmax(trace):], trace[np.argmax(trace):])
        fid = initialization_fidelity(ratio, lower_bound=True)
        return [_summary("initialization", {"I_peak": peak, "I_ss": tail, "ratio": ratio, "fidelity_lower_bound": fid, "init_time": decay["T"]})]
    raise KeyError(name)
