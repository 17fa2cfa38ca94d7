"""The figure suite: one dataset and fit report per reproduced figure panel.

Most panels are builtin sequences run through the Monte-Carlo engine.
Panels that are relations rather than measurements (Rabi-frequency scaling,
non-RWA spectrum, CPMG scaling, cooling-depth trends, envelope spectra) are
computed directly from the library and packaged as the same result type.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .analysis import FitResult, envelope_fft, fit_power_law, fit_stretched_exponential
from .bath import run_cooling
from .dynamics import evolve_lab_frame, ket, spin_rabi_frequency
from .noise import cpmg_t2
from .sequence.builtins import analyze, builtin_experiments, ramsey_pulse_time
from .sequence.engine import World, run_experiment
from .sequence.results import Axis, ExperimentResult

__all__ = ["FIGURES", "Panel", "run_panel"]


@dataclass(frozen=True)
class Panel:
    key: str
    description: str
    builtin: str | None = None
    overrides: tuple = ()
    table: Callable | None = None


def _summary(model, params) -> FitResult:
    return FitResult(model, {k: float(v) for k, v in params.items()}, {}, 0.0)


def _meta(seed, **extra) -> dict:
    return {"seed": str(seed), **{k: str(v) for k, v in extra.items()}}


def rabi_scaling(world: World, seed: int, shots: int):
    """Spin Rabi frequency vs optical detuning at fixed power."""
    det = np.linspace(150e9, 450e9, 31)
    om = np.array([spin_rabi_frequency(replace(world.drive, detuning=d), world.cavity) for d in det])
    res = ExperimentResult([Axis("Delta", det, "Hz")], om, np.zeros_like(om), _meta(seed, quantity="spin_rabi_frequency_Hz"))
    return res, lambda: [fit_power_law(det, om)]


def fast_rabi(world: World, seed: int, shots: int, rabi: float = 2e9):
    """Lab-frame Rabi trace at a Rabi frequency comparable to the Zeeman splitting."""
    z = world.system.zeeman
    times = np.arange(0.0, 5e-9, 1.0 / (8.0 * z))
    states = evolve_lab_frame(ket(0), rabi, z, times[-1], t_eval=times)
    p_up = np.abs(states[:, 1]) ** 2
    spec = np.abs(np.fft.rfft((p_up - p_up.mean()) * np.hanning(len(p_up))))
    freq = np.fft.rfftfreq(len(p_up), times[1] - times[0])
    band = np.abs(freq - z) < 0.1 * z
    rel = float(spec[band].max() / spec.max())
    res = ExperimentResult([Axis("t", times, "s")], p_up, np.zeros_like(p_up), _meta(seed, quantity="P_up", rabi=repr(rabi)))
    fit = {"rabi": rabi, "zeeman_component_relative_amplitude": rel, "zeeman_component_relative_power": rel**2}
    return res, lambda: [_summary("non_rwa_spectrum", fit)]


def cpmg_scaling(world: World, seed: int, shots: int):
    """Filter-function T2 vs pulse number, with and without relaxation."""
    if world.noise is None:
        raise ValueError("cpmg scaling needs a noise spectrum (noise.enabled)")
    ns = np.array([1, 2, 4, 8, 16])
    t2 = np.array([cpmg_t2(world.noise, int(n)) for n in ns])
    t2_t1 = np.array([cpmg_t2(world.noise, int(n), t1=world.system.t1) for n in ns])
    res = ExperimentResult([Axis("n_pulses", ns.astype(float), "")], t2_t1, np.zeros_like(t2_t1), _meta(seed, quantity="T2_with_T1_s"))

    def fits():
        fit = fit_power_law(ns, t2)
        fit.params["max_t2_over_2t1"] = float(np.max(t2_t1) / (2 * world.system.t1))
        return [fit]

    return res, fits


def _ramsey_envelope(samples: np.ndarray, times: np.ndarray, chunk: int = 256) -> np.ndarray:
    out = np.empty(times.size)
    for a in range(0, times.size, chunk):
        ph = 2.0 * np.pi * np.outer(times[a:a + chunk], samples)
        out[a:a + chunk] = np.hypot(np.cos(ph).mean(axis=1), np.sin(ph).mean(axis=1))
    return out


def cooling_depth(world: World, seed: int, shots: int):
    """Stretched-exponential fits of the cooled Ramsey envelope vs the final sensing time."""
    taus = np.array([300e-9, 600e-9, 1000e-9, 1500e-9])
    t = np.linspace(0.0, 4e-6, 401)
    envs = []
    for k, tau in enumerate(taus):
        rng = np.random.default_rng([seed, 0xF3D, k])
        traj = run_cooling(replace(world.protocol, tau_max=float(tau)), world.bath.overhauser, rng, n_runs=world.cooling_pool)
        envs.append(_ramsey_envelope(traj.final.samples, t))
    grid = np.stack(envs)
    res = ExperimentResult([Axis("tau_max", taus, "s"), Axis("t", t, "s")], grid.ravel(), np.zeros(grid.size), _meta(seed, quantity="ramsey_visibility"))

    def fits():
        params = {}
        for tau, env in zip(taus, envs):
            fit = fit_stretched_exponential(t, np.clip(env, 0, 1.05))
            params[f"alpha@{tau * 1e9:.0f}ns"] = fit["alpha"]
            params[f"T2@{tau * 1e9:.0f}ns"] = fit["T2"]
        return [_summary("cooling_depth", params)]

    return res, fits


def envelope_spectra(world: World, seed: int, shots: int):
    """Ramsey envelopes of thermal and cooled baths; the fit reports their FFT widths."""
    rng = np.random.default_rng([seed, 0xF3F])
    thermal = rng.normal(world.bath.overhauser.mean, world.bath.overhauser.sigma, world.cooling_pool)
    cooled = run_cooling(world.protocol, world.bath.overhauser, rng, n_runs=world.cooling_pool).final.samples
    t = np.arange(0.0, 4e-6, 1e-9)
    envs = np.stack([_ramsey_envelope(x, t) for x in (thermal, cooled)])
    res = ExperimentResult(
        [Axis("bath", np.array([0.0, 1.0]), ""), Axis("t", t, "s")],
        envs.ravel(),
        np.zeros(envs.size),
        _meta(seed, quantity="ramsey_visibility", bath_axis="0=thermal,1=cooled"),
    )

    def fits():
        widths = [envelope_fft(t, env).width for env in envs]
        return [_summary("envelope_widths", {"thermal_width": widths[0], "cooled_width": widths[1], "ratio": widths[0] / widths[1]})]

    return res, fits


FIGURES: dict[str, Panel] = {
    p.key: p
    for p in [
        Panel("fig1d", "Rabi oscillation", "rabi"),
        Panel("fig1e", "Rabi frequency vs optical detuning", table=rabi_scaling),
        Panel("fig1f", "Rabi chevron", "chevron"),
        Panel("fig1g", "Rabi drive beyond the rotating-wave approximation", table=fast_rabi),
        Panel("fig2a", "Ramsey fringes at 30 MHz detuning", "ramsey"),
        Panel("fig2b", "Hahn echo", "hahn"),
        Panel("fig2c", "CPMG coherence time vs pulse number", table=cpmg_scaling),
        Panel("fig3a", "Rabi quality factor vs Rabi frequency", "hh_scan"),
        Panel("fig3b", "Ramsey after quantum-sensing cooling", "cooling_ramsey"),
        Panel("fig3c", "Ramsey after Rabi-drive cooling", "cooling_ramsey", (("mode", "rabi_drive"),)),
        Panel("fig3d", "Stretch exponent vs final sensing time", table=cooling_depth),
        Panel("fig3e", "Chevron after cooling", "cooled_chevron"),
        Panel("fig3f", "Envelope spectra before and after cooling", table=envelope_spectra),
        Panel(
            "fig3g",
            "Flip-flop sidebands at 13.6 MHz drive",
            "cooled_chevron",
            (("omega", "13.6MHz"), ("delta_range", "-40MHz..40MHz"), ("delta_steps", 81), ("t_range", "500ns..500ns"), ("t_steps", 1)),
        ),
    ]
}


def run_panel(key: str, world: World, *, seed: int, shots: int, threads: int = 1, rwa: bool = True, params: dict | None = None):
    """Dataset and fits of one panel. Returns ``(result, fits, fit_error)``."""
    from .analysis import FitError

    panel = FIGURES[key]
    if panel.table is not None:
        res, fits = panel.table(world, seed, shots)
        try:
            return res, fits(), None
        except FitError as exc:
            return res, [], exc
    overrides = dict(panel.overrides)
    w = world
    if "mode" in overrides:
        w = replace(world, protocol=replace(world.protocol, mode=overrides.pop("mode")))
    overrides.update(params or {})
    seq = builtin_experiments(panel.builtin, overrides)
    res = run_experiment(seq, w, shots=shots, seed=seed, threads=threads, rwa=rwa, metadata={"experiment": key})
    try:
        pt = ramsey_pulse_time(seq, w) if panel.builtin in ("ramsey", "cooling_ramsey") else None
        return res, analyze(panel.builtin, res, pulse_time=pt), None
    except FitError as exc:
        return res, [], exc
