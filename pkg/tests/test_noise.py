import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from holespin import noise as n
from holespin.analysis import fit_power_law

CAL = n.calibrate_amplitude(n.NoiseSpectrum(beta=0.45))
HAHN, FREE = n.DDSequence(1), n.DDSequence(0)


def test_calibration_hits_hahn_t2():
    assert n.coherence_from_filter_function(HAHN, CAL, 20e-6) == pytest.approx(math.exp(-1), rel=1e-6)
    assert n.cpmg_t2(CAL, 1) == pytest.approx(20e-6, rel=1e-6)


def test_static_noise_refocused():
    static = n.NoiseSpectrum(quasistatic_sigma=8e6)
    for N in (1, 2, 8):
        assert n.coherence_from_filter_function(n.DDSequence(N), static, 10e-6) == pytest.approx(1.0, abs=1e-6)


def test_free_evolution_matches_monte_carlo_bath():
    # oracle: Monte-Carlo average over quasistatic detunings as oracle
    sigma = 8e6
    t = np.linspace(0, 80e-9, 41)
    x = np.random.default_rng(4).normal(0, sigma, 200_000)
    mc = np.abs(np.exp(2j * np.pi * np.outer(t, x)).mean(axis=1))
    ff = n.coherence_from_filter_function(FREE, n.NoiseSpectrum(quasistatic_sigma=sigma), t)
    assert np.max(np.abs(mc - ff)) < 0.01


@pytest.mark.parametrize("N, T", [(0, 1e-6), (1, 20e-6), (8, 40e-6), (3, 7e-6)])
def test_decoherence_integral_vs_adaptive_quadrature(N, T):
    # oracle: scipy.quad over log-spaced panels in omega as the oracle
    seq = n.DDSequence(N)

    def f(w):
        return CAL(w) * n.filter_function(w * T, seq) / w**2 / math.pi

    edges = np.geomspace(2 * math.pi * CAL.low_cutoff, 2 * math.pi * CAL.high_cutoff, 3000)
    ref = sum(quad(f, a, c, limit=200)[0] for a, c in zip(edges[:-1], edges[1:]))
    assert n.decoherence_integral(CAL, seq, T) == pytest.approx(ref, rel=1e-4)


def test_cpmg_gamma():
    # reference value: gamma = 0.31 +/- 0.03 over N = 1..16
    ns = [1, 2, 4, 8, 16]
    gamma = fit_power_law(ns, [n.cpmg_t2(CAL, k) for k in ns])["exponent"]
    assert gamma == pytest.approx(0.31, abs=0.03)


def test_t2_capped_by_relaxation():
    # reference value: T2 = 2 T1 limit with T1 = 21 us
    for k in (1, 2, 4, 8, 16):
        assert n.cpmg_t2(CAL, k, t1=21e-6) <= 2 * 21e-6 * 1.02


@given(st.floats(0.05, 1.5))
def test_t2_monotone_in_pulse_number(beta):
    spec = n.calibrate_amplitude(n.NoiseSpectrum(beta=beta))
    t2 = [n.cpmg_t2(spec, k) for k in (1, 2, 4, 8)]
    assert all(b > a for a, b in zip(t2, t2[1:]))


@given(st.integers(0, 12), st.floats(0.01, 500.0))
def test_closed_forms_match_general_sum(N, x):
    seq = n.DDSequence(N)
    assert n.filter_function(x, seq) == pytest.approx(float(n.filter_function_general(x, seq)), rel=1e-9, abs=1e-12)


def test_divergence_requires_cutoff():
    with pytest.raises(n.NoiseError):
        n.decoherence_integral(n.NoiseSpectrum(amplitude=1.0, beta=1.2, low_cutoff=0.0), FREE, 1e-6)


def test_named_sequences():
    assert n.DDSequence.named("hahn").n_pulses == 1
    assert n.DDSequence.named("ramsey").n_pulses == 0
    assert n.DDSequence.named("cpmg", 4).n_pulses == 4
    with pytest.raises(n.NoiseError):
        n.DDSequence.named("cpmg")


# -- trajectories ----------------------------------------------------------------------------------


def test_white_noise_decorrelates():
    white = n.NoiseSpectrum(white_level=1e10, amplitude=0.0, low_cutoff=0.0, high_cutoff=50e6)
    tr = n.generate_noise_trajectory(white, 200e-6, 10e-9, np.random.default_rng(2), pad=1)
    v = tr.values[0] - tr.values[0].mean()
    for lag in (2, 3, 7, 50):
        r = np.dot(v[:-lag], v[lag:]) / np.dot(v, v)
        assert abs(r) < 3 / math.sqrt(v.size)


def test_one_over_f_periodogram_slope():
    # oracle: log-binned periodogram fit of beta = 1 noise
    spec = n.NoiseSpectrum(amplitude=1e12, beta=1.0, low_cutoff=1e3, high_cutoff=50e6)
    dt = 10e-9
    tr = n.generate_noise_trajectory(spec, 2e-3, dt, np.random.default_rng(3), n_realizations=8)
    x = tr.values - tr.values.mean(axis=1, keepdims=True)
    psd = (np.abs(np.fft.rfft(x, axis=1)) ** 2).mean(axis=0)
    f = np.fft.rfftfreq(x.shape[1], dt)
    edges = np.geomspace(3e4, 5e6, 16)
    fc, pc = [], []
    for a, c in zip(edges[:-1], edges[1:]):
        m = (f >= a) & (f < c)
        fc.append(np.sqrt(a * c))
        pc.append(psd[m].mean())
    assert fit_power_law(fc, pc)["exponent"] == pytest.approx(-1.0, abs=0.1)


def test_quasistatic_sigma():
    spec = n.NoiseSpectrum(quasistatic_sigma=8e6)
    tr = n.generate_noise_trajectory(spec, 1e-6, 1e-7, np.random.default_rng(4), n_realizations=1_000_000, kind="quasistatic")
    assert tr.values[:, 0].std() == pytest.approx(8e6, rel=0.01)
    assert np.all(tr.values == tr.values[:, :1])


def test_aliasing_rejected():
    with pytest.raises(n.NoiseError):
        n.generate_noise_trajectory(CAL, 1e-6, 10e-9, np.random.default_rng(0))


def test_zero_noise_full_visibility():
    tr = n.NoiseTrajectory(np.linspace(0, 10e-6, 101), np.zeros((5, 101)), "zero")
    for N in (0, 1, 4):
        assert n.simulate_dd_sequence_timedomain(tr, n.DDSequence(N), 10e-6) == 1.0


def test_hahn_linear_drift_phase():
    # oracle: int_0^{T/2} c t dt - int_{T/2}^T c t dt = -c T^2 / 4
    T, c = 10e-6, 3e9
    t = np.linspace(0, T, 1001)
    tr = n.NoiseTrajectory(t, np.stack([c * t, -c * t]), "drift")
    vis, ph = n.simulate_dd_sequence_timedomain(tr, HAHN, T, return_phases=True)
    expected = 2 * math.pi * c * T**2 / 4
    assert ph[0] == pytest.approx(-expected, rel=1e-9)
    assert vis == pytest.approx(abs(math.cos(expected)), abs=1e-3)


@given(st.floats(-50e6, 50e6), st.floats(1e-6, 50e-6))
def test_hahn_static_offset_refocused(offset, T):
    t = np.linspace(0, T, 11)
    for sgn in (1, -1):
        tr = n.NoiseTrajectory(t, np.full((1, 11), sgn * offset), "static")
        vis, ph = n.simulate_dd_sequence_timedomain(tr, HAHN, T, return_phases=True)
        assert vis == pytest.approx(1.0, abs=1e-12)
        assert abs(ph[0]) < 1e-6


def test_cpmg8_time_domain_vs_filter_function():
    T, dt = 40e-6, 5e-9
    phases = []
    for c in range(8):
        tr = n.generate_noise_trajectory(CAL, T, dt, np.random.default_rng([13, c]), n_realizations=250)
        phases.append(n.simulate_dd_sequence_timedomain(tr, n.DDSequence(8), T, return_phases=True)[1])
    td = abs(np.mean(np.exp(1j * np.concatenate(phases))))
    assert td == pytest.approx(n.coherence_from_filter_function(n.DDSequence(8), CAL, T), abs=0.05)


def test_trajectory_too_short():
    tr = n.NoiseTrajectory(np.linspace(0, 1e-6, 11), np.zeros((1, 11)), "zero")
    with pytest.raises(n.NoiseError):
        n.simulate_dd_sequence_timedomain(tr, HAHN, 2e-6)
