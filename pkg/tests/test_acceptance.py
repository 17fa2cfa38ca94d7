"""Acceptance criteria 1-13.

Each criterion has a pipeline ``pipeline_N(scale)`` returning the dataset it
judges (an :class:`ExperimentResult`, written as CSV for criterion 13) and
the summary numbers it is judged on. ``scale < 1`` shrinks shot and
realization counts; criterion 13 re-runs every pipeline at a small scale
and compares CSV bytes. Every test records one PASS/FAIL line, printed
inline and repeated in the terminal summary.
"""

import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy.signal import find_peaks
from scipy.stats import spearmanr

from holespin import bath as b
from holespin import dynamics as d
from holespin import noise as n
from holespin.analysis import fit_power_law, fit_stretched_exponential
from holespin.cavity import CavityParams, intensity_enhancement
from holespin.config import load_config
from holespin.figures import envelope_spectra, rabi_scaling
from holespin.sequence.builtins import analyze, builtin_experiments, ramsey_pulse_time, visibility
from holespin.sequence.engine import run_experiment
from holespin.sequence.results import Axis, ExperimentResult

SEED = 2024


def world():
    return load_config(None).world


def table(axes, values, **meta):
    values = np.asarray(values, dtype=float)
    return ExperimentResult(axes, values, np.zeros(values.size), {k: str(v) for k, v in meta.items()})


def _n(base, scale, floor=2):
    return max(int(round(base * scale)), floor)


# -- 1. cavity crossover --------------------------------------------------------------------------


def pipeline_1(scale=1.0):
    cav = CavityParams(finesse=500.0, linewidth=25e9, mode_splitting=50e9)
    det = np.linspace(0.0, 900e9, 181)
    res = table([Axis("Delta", det, "Hz")], intensity_enhancement(det, cav), quantity="intensity_enhancement")
    return res, {"peak": float(intensity_enhancement(0.0, cav)), "at_450": float(intensity_enhancement(450e9, cav))}


def test_criterion_01_cavity_crossover(acceptance):
    _, s = pipeline_1()
    peak_target = 8 * 500 / math.pi
    ok = abs(s["peak"] / peak_target - 1) < 0.01 and abs(s["at_450"] - 1) < 0.02
    acceptance(1, ok, f"E(0)={s['peak']:.2f} (8F/pi={peak_target:.2f}, tol 1%), E(450 GHz)={s['at_450']:.4f} (1 +/- 2%)")
    assert ok


# -- 2. Rabi-frequency scaling ----------------------------------------------------------------------


def pipeline_2(scale=1.0):
    res, fits = rabi_scaling(world(), SEED, 1)
    return res, {"exponent": fits()[0]["exponent"]}


def test_criterion_02_rabi_detuning_exponent(acceptance):
    _, s = pipeline_2()
    ok = abs(s["exponent"] + 3.0) <= 0.05
    acceptance(2, ok, f"fitted exponent {s['exponent']:.4f} over 150-450 GHz (-3.0 +/- 0.05)")
    assert ok


# -- 3. chevron vs 4-level integrator ---------------------------------------------------------------


def pipeline_3(scale=1.0):
    k = _n(101, scale, 5)
    rabi = 95e6
    deltas = np.linspace(-200e6, 200e6, k)
    times = np.linspace(0.0, 100e-9, k)
    rwa = np.empty((k, k))
    ode = np.empty((k, k))
    r0 = np.tile([0.0, 0.0, 1.0], (k, 1))
    for i, delta in enumerate(deltas):
        # engine propagator (Bloch rotation) per time point
        z = d.rotate_bloch(r0, rabi, delta, 0.0, times)[:, 2]
        rwa[i] = 0.5 * (1.0 - z)
        h4 = d.embed_qubit(d.rwa_hamiltonian(rabi, delta, 0.0))
        states = d.evolve_lindblad(d.dm(d.DOWN, 4), h4, [], 0.0, method="ode", t_eval=times, rtol=1e-10, atol=1e-12)
        ode[i] = states[:, d.UP, d.UP].real
    closed = d.rabi_up_population(rabi, deltas[:, None], times[None, :])
    res = table([Axis("delta", deltas, "Hz"), Axis("t", times, "s")], rwa, quantity="P_up", rabi=rabi)
    return res, {"max_err": float(np.max(np.abs(rwa - ode))), "max_err_closed": float(np.max(np.abs(closed - ode))), "shape": rwa.shape}


@pytest.mark.slow
def test_criterion_03_chevron_matches_integrator(acceptance):
    _, s = pipeline_3()
    ok = s["shape"] == (101, 101) and s["max_err"] < 1e-5 and s["max_err_closed"] < 1e-5
    acceptance(3, ok, f"101x101 chevron, max |P_rwa - P_ode| = {s['max_err']:.2e} (closed form {s['max_err_closed']:.2e}; < 1e-5)")
    assert ok


# -- 4. RWA breakdown -----------------------------------------------------------------------------


def _zeeman_band(rabi, duration, zeeman=5.8e9):
    times = np.arange(0.0, duration, 1 / (8 * zeeman))
    p = np.abs(d.evolve_lab_frame(d.ket(d.DOWN), rabi, zeeman, times[-1], t_eval=times)[:, d.UP]) ** 2
    amp = np.abs(np.fft.rfft((p - p.mean()) * np.hanning(p.size)))
    f = np.fft.rfftfreq(p.size, times[1] - times[0])
    band = np.abs(f - zeeman) < 0.1 * zeeman
    rel_amp = float(amp[band].max() / amp.max())
    return times, p, rel_amp, rel_amp**2


def pipeline_4(scale=1.0):
    t_fast, p_fast, a_fast, pw_fast = _zeeman_band(2e9, 5e-9)
    t_slow, p_slow, a_slow, pw_slow = _zeeman_band(20e6, 100e-9 if scale >= 1 else 20e-9)
    res = table([Axis("t", t_fast, "s")], p_fast, quantity="P_up", rabi=2e9)
    return res, {"fast_power": pw_fast, "fast_amp": a_fast, "slow_power": pw_slow, "slow_amp": a_slow}


@pytest.mark.slow
def test_criterion_04_rwa_breakdown(acceptance):
    _, s = pipeline_4()
    ok = s["fast_power"] > 1e-2 and s["slow_power"] < 1e-4
    acceptance(
        4, ok,
        f"Z_h component (power rel. to Rabi peak): 2 GHz {s['fast_power']:.3e} (> 1e-2), 20 MHz {s['slow_power']:.2e} (< 1e-4); "
        f"amplitude ratios {s['fast_amp']:.3e} / {s['slow_amp']:.2e}",
    )
    assert ok


# -- 5. Ramsey T2* ----------------------------------------------------------------------------------


def pipeline_5(scale=1.0):
    w = replace(world(), rabi=2e9)  # near-ideal pi/2 pulses
    seq = builtin_experiments("ramsey", {"delta": "0Hz", "t_range": ("0ns", "100ns"), "steps": 101})
    res = run_experiment(seq, w, shots=_n(100_000, scale), seed=SEED)
    fit = fit_stretched_exponential(res.axes[0].values, visibility(res), alpha=2.0)
    return res, {"t2star": fit["T2"], "sigma_f": w.bath.overhauser.sigma}


@pytest.mark.slow
def test_criterion_05_ramsey_t2star(acceptance):
    _, s = pipeline_5()
    ok = abs(s["t2star"] / 28e-9 - 1) <= 0.03
    acceptance(5, ok, f"Gaussian-fit T2* = {s['t2star'] * 1e9:.2f} ns at 1e5 shots, sigma_f = {s['sigma_f'] / 1e6:.3f} MHz (28 ns +/- 3%)")
    assert ok


# -- 6. Ramsey fringe frequency ---------------------------------------------------------------------


def pipeline_6(scale=1.0):
    w = world()
    seq = builtin_experiments("ramsey", {"delta": "30MHz"})
    res = run_experiment(seq, w, shots=_n(10_000, scale), seed=SEED)
    fit = analyze("ramsey", res, pulse_time=ramsey_pulse_time(seq, w))[0]
    return res, {"frequency": fit["frequency"], "error": fit.errors["frequency"], "t2": fit["T2"]}


@pytest.mark.slow
def test_criterion_06_ramsey_fringe_frequency(acceptance):
    _, s = pipeline_6()
    ok = abs(s["frequency"] / 30e6 - 1) <= 0.005
    acceptance(6, ok, f"fringe frequency {s['frequency'] / 1e6:.4f} +/- {s['error'] / 1e6:.4f} MHz at 1e4 shots (30 MHz +/- 0.5%)")
    assert ok


# -- 7. CPMG scaling --------------------------------------------------------------------------------


def _fitted_cpmg_t2(spectrum, n_pulses, t1=None):
    est = n.cpmg_t2(spectrum, n_pulses, t1=t1)
    T = np.linspace(0.0, 3.0 * est, 61)
    v = n.coherence_from_filter_function(n.DDSequence(n_pulses), spectrum, T, t1=t1)
    return fit_stretched_exponential(T, v)["T2"]


def pipeline_7(scale=1.0):
    w = world()
    pulses = np.array([1, 2, 4, 8, 16])
    t2 = np.array([_fitted_cpmg_t2(w.noise, int(k)) for k in pulses])
    t2_t1 = np.array([_fitted_cpmg_t2(w.noise, int(k), t1=w.system.t1) for k in pulses])
    res = table([Axis("route", np.array([0.0, 1.0])), Axis("n_pulses", pulses.astype(float))], np.stack([t2, t2_t1]), quantity="T2_s", route="0=noise only,1=with T1")
    return res, {"gamma": fit_power_law(pulses, t2)["exponent"], "max_t2_t1": float(t2_t1.max()), "t1": w.system.t1}


@pytest.mark.slow
def test_criterion_07_cpmg_scaling(acceptance):
    _, s = pipeline_7()
    cap = 2 * s["t1"] * 1.02
    ok = abs(s["gamma"] - 0.31) <= 0.03 and s["max_t2_t1"] <= cap
    acceptance(7, ok, f"gamma = {s['gamma']:.4f} (0.31 +/- 0.03); max T2 with T1 = {s['max_t2_t1'] * 1e6:.2f} us (<= {cap * 1e6:.2f} us)")
    assert ok


# -- 8. filter function vs time domain --------------------------------------------------------------

BETAS = (0.0, 0.45, 1.0)
PULSES = (0, 1, 4, 8)
DURATIONS = (2e-6, 5e-6, 10e-6, 20e-6, 40e-6)


def pipeline_8(scale=1.0):
    dt = 10e-9
    chunks = 10 if scale >= 1 else 1
    per_chunk = 1000 if scale >= 1 else 50
    td = np.empty((len(BETAS), len(PULSES), len(DURATIONS)))
    ff = np.empty_like(td)
    for i, beta in enumerate(BETAS):
        # beta >= 1 needs an infrared cutoff well above 1/T to stay stationary over the window
        spec = n.calibrate_amplitude(n.NoiseSpectrum(beta=beta, low_cutoff=1e3 if beta >= 1 else 10.0, high_cutoff=1 / (20 * dt)))
        for j, k in enumerate(PULSES):
            seq = n.DDSequence(k)
            for m, T in enumerate(DURATIONS):
                phases = []
                for c in range(chunks):
                    rng = np.random.default_rng([SEED, 8, i, j, m, c])
                    traj = n.generate_noise_trajectory(spec, T, dt, rng, n_realizations=per_chunk)
                    phases.append(n.simulate_dd_sequence_timedomain(traj, seq, T, return_phases=True)[1])
                td[i, j, m] = abs(np.mean(np.exp(1j * np.concatenate(phases))))
                ff[i, j, m] = n.coherence_from_filter_function(seq, spec, T)
    axes = [Axis("route", np.array([0.0, 1.0])), Axis("beta", np.array(BETAS)), Axis("n_pulses", np.array(PULSES, float)), Axis("T", np.array(DURATIONS), "s")]
    res = table(axes, np.stack([td, ff]), quantity="visibility", route="0=time domain,1=filter function", realizations=chunks * per_chunk)
    return res, {"worst": float(np.max(np.abs(td - ff))), "realizations": chunks * per_chunk}


@pytest.mark.slow
def test_criterion_08_filter_function_vs_time_domain(acceptance):
    _, s = pipeline_8()
    ok = s["worst"] <= 0.03 and s["realizations"] >= 10_000
    acceptance(8, ok, f"3x4x5 grid, {s['realizations']} realizations: max |V_td - V_ff| = {s['worst']:.4f} (<= 0.03)")
    assert ok


# -- 9. Hartmann-Hahn dips ----------------------------------------------------------------------------


def pipeline_9(scale=1.0):
    w = world()
    step = 0.1e6 if scale >= 1 else 2e6
    omegas = np.round(np.arange(20e6, 50e6 + 1.0, step), 3)
    shots = _n(2000, scale, 1000)  # the Q fit needs at least 1000 shots
    # a narrowed bath (T2* = 535 ns) resolves the resonances; thermal broadening shifts them
    cooled = b.OverhauserState(sigma=b.sigma_from_t2star(535e-9))
    rows = []
    for enabled in (True, False):
        bath = replace(w.bath, overhauser=cooled, hh_enabled=enabled)
        # common random numbers: every Rabi frequency sees the same Overhauser draws
        rows.append([b.rabi_q_factor_with_bath(o, bath, w.system, shots, np.random.default_rng([SEED, 9]))["q"] for o in omegas])
    q = np.array(rows)
    res = table([Axis("hh_enabled", np.array([1.0, 0.0])), Axis("omega", omegas, "Hz")], q, quantity="rabi_q")
    return res, {"omegas": omegas, "q_on": q[0], "q_off": q[1], "larmor": w.bath.larmor_frequencies(), "width": w.bath.hh_width}


def _dips(q):
    idx, _ = find_peaks(-q, prominence=0.05 * np.median(q))
    return idx


@pytest.mark.slow
def test_criterion_09_hartmann_hahn_dips(acceptance):
    s = pipeline_9()[1]
    om = s["omegas"]
    dips_on = om[_dips(s["q_on"])]
    dips_off = om[_dips(s["q_off"])]
    found = [bool(np.any(np.abs(dips_on - wn) <= s["width"])) for wn in s["larmor"]]
    ok = all(found) and dips_off.size == 0
    acceptance(
        9, ok,
        f"dips at {np.round(dips_on / 1e6, 2).tolist()} MHz vs Larmor {np.round(s['larmor'] / 1e6, 2).tolist()} MHz "
        f"(within {s['width'] / 1e6:.1f} MHz: {found}); ablated dips: {dips_off.size}",
    )
    assert ok


# -- 10. nuclear-spin cooling -------------------------------------------------------------------------


def pipeline_10(scale=1.0):
    w = world()
    pool = _n(w.cooling_pool, scale, 500)
    w = replace(w, cooling_pool=pool)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        traj = b.run_cooling(w.protocol, w.bath.overhauser, np.random.default_rng([SEED, 10]), n_runs=pool)
    rho = float(spearmanr(traj.cycle, traj.sigma)[0])
    shots = _n(2000, scale, 50)
    cool_seq = builtin_experiments("cooling_ramsey")
    cooled = run_experiment(cool_seq, w, shots=shots, seed=SEED)
    t2_cooled = analyze("cooling_ramsey", cooled, pulse_time=ramsey_pulse_time(cool_seq, w))[1]["T2"]
    bare_seq = builtin_experiments("ramsey", {"delta": "0Hz", "t_range": ("0ns", "100ns"), "steps": 101})
    bare = run_experiment(bare_seq, replace(w, rabi=2e9), shots=shots, seed=SEED)
    # the decayed tail is shot noise around zero; keep it inside the fitter's input range
    v_bare = np.clip(visibility(bare), -0.05, 1.05)
    t2_bare = fit_stretched_exponential(bare.axes[0].values, v_bare, alpha=2.0)["T2"]
    env, fits = envelope_spectra(w, SEED, shots)
    widths = fits()[0]
    res = table([Axis("cycle", traj.cycle.astype(float))], traj.sigma, quantity="overhauser_sigma_Hz")
    return res, {"rho": rho, "t2_cooled": t2_cooled, "t2_bare": t2_bare, "ratio": widths["ratio"], "cooled_csv": cooled, "env_csv": env}


@pytest.mark.slow
def test_criterion_10_cooling(acceptance):
    s = pipeline_10()[1]
    gain = s["t2_cooled"] / s["t2_bare"]
    ok = s["rho"] < -0.95 and gain > 10 and s["ratio"] >= 15
    acceptance(
        10, ok,
        f"Spearman rho = {s['rho']:.4f} (< -0.95); T2* {s['t2_bare'] * 1e9:.1f} -> {s['t2_cooled'] * 1e9:.0f} ns "
        f"(x{gain:.1f}, > 10); FFT width ratio {s['ratio']:.1f} (>= 15)",
    )
    assert ok


# -- 11. phase control ----------------------------------------------------------------------------------


def pipeline_11(scale=1.0):
    w = world()
    shots = _n(10_000, scale, 50)
    sweep = run_experiment(builtin_experiments("phase_sweep", {"steps": 73}), w, shots=shots, seed=SEED)
    harmonic = analyze("phase_sweep", sweep)[0]["dominant_harmonic"]
    y, se = sweep.grid(), sweep.stderr
    half = 36  # 73 points over [0, 2 pi]: index k + 36 is phase + pi
    z_score = np.abs(y[:half] - y[half:2 * half]) / np.hypot(se[:half], se[half:2 * half])
    ramsey = run_experiment(builtin_experiments("ramsey", {"delta": "30MHz"}), w, shots=shots, seed=SEED, record_z=True)
    fz = ramsey.extra["final_z"]
    # single-shot projection noise of a z measurement on the pair-averaged state
    z_err = float(np.sqrt(np.mean(1.0 - fz**2) / fz.size))
    return sweep, {"harmonic": harmonic, "max_z_score": float(z_score.max()), "mean_z": float(fz.mean()), "z_err": z_err, "ramsey": ramsey}


@pytest.mark.slow
def test_criterion_11_phase_control(acceptance):
    s = pipeline_11()[1]
    ok = s["harmonic"] == 2 and s["max_z_score"] < 4.0 and abs(s["mean_z"]) < 3 * s["z_err"]
    acceptance(
        11, ok,
        f"phase sweep dominant harmonic {s['harmonic']} (pi-periodic), max |S(phi) - S(phi+pi)| = {s['max_z_score']:.2f} sigma; "
        f"interleaved Ramsey mean z = {s['mean_z']:.2e} +/- {s['z_err']:.1e}",
    )
    assert ok


# -- 12. initialisation ---------------------------------------------------------------------------------


def pipeline_12(scale=1.0):
    w = world()
    formula = d.initialization_fidelity(0.033, lower_bound=True)
    sim = d.simulate_initialization(w.readout, w.system, duration=20e-9)
    trace = run_experiment(builtin_experiments("init_fidelity"), w, shots=2, seed=SEED)
    engine_fit = analyze("init_fidelity", trace)[0]
    return trace, {"formula": formula, "init_time": sim.init_time, "ratio": sim.i_ss / sim.i_peak, "engine_init_time": engine_fit["init_time"]}


def test_criterion_12_initialization(acceptance):
    _, s = pipeline_12()
    ok = abs(s["formula"] - 0.967) < 1e-12 and abs(s["init_time"] / 3e-9 - 1) <= 0.3 and abs(s["engine_init_time"] / 3e-9 - 1) <= 0.3
    acceptance(
        12, ok,
        f"F_lb(0.033) = {s['formula']:.12f} (0.967); pumping 1/e time {s['init_time'] * 1e9:.2f} ns, "
        f"engine trace {s['engine_init_time'] * 1e9:.2f} ns (3 ns +/- 30%), I_ss/I_peak = {s['ratio']:.4f}",
    )
    assert ok


# -- 13. determinism ------------------------------------------------------------------------------------

PIPELINES = {k: globals()[f"pipeline_{k}"] for k in range(1, 13)}


def _csv_texts(number):
    res, summary = PIPELINES[number](scale=0.02)
    texts = [res.to_csv_text()]
    texts += [v.to_csv_text() for v in summary.values() if isinstance(v, ExperimentResult)]
    return texts


@pytest.mark.slow
def test_criterion_13_determinism(acceptance, tmp_path):
    mismatched = []
    for number in PIPELINES:
        first, second = _csv_texts(number), _csv_texts(number)
        for k, (a, bb) in enumerate(zip(first, second)):
            pa, pb = tmp_path / f"c{number}_{k}_a.csv", tmp_path / f"c{number}_{k}_b.csv"
            pa.write_text(a, encoding="utf-8", newline="\n")
            pb.write_text(bb, encoding="utf-8", newline="\n")
            if pa.read_bytes() != pb.read_bytes():
                mismatched.append(f"{number}.{k}")
    ok = not mismatched
    acceptance(13, ok, f"pipelines 1-12 re-run with the same seed: {'all CSVs byte-identical' if ok else 'differ: ' + ', '.join(mismatched)}")
    assert ok
