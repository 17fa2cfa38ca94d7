import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from holespin import dynamics as d
from holespin.analysis import fit_exponential_decay, pi_pulse_fidelity
from holespin.bath import NuclearBath, OverhauserState, rabi_q_factor_with_bath
from holespin.cavity import reference_cavity

CAV = reference_cavity()
P0_COUPLING = d.calibrate_coupling(95e6, 320e9, 1.0, CAV)


def drive(**kw):
    return d.RamanDrive(coupling=P0_COUPLING, **kw)


# -- Raman Rabi frequency -----------------------------------------------------------------------


def test_calibration_point():
    # reference value: 95 MHz at 320 GHz detuning
    assert d.spin_rabi_frequency(drive(detuning=320e9, power=1.0), CAV) == pytest.approx(95e6, rel=1e-12)


def test_linear_in_power():
    assert d.spin_rabi_frequency(drive(detuning=320e9, power=2.0), CAV) == pytest.approx(190e6, rel=1e-12)


def test_resonant_drive_rejected():
    with pytest.raises(d.DynamicsError):
        d.spin_rabi_frequency(drive(detuning=0.0), CAV)


def test_detuning_scaling_exponent():
    # oracle: log-log slope by an independent least-squares line
    det = np.linspace(150e9, 450e9, 31)
    om = [d.spin_rabi_frequency(drive(detuning=x), CAV) for x in det]
    slope = np.polyfit(np.log(det), np.log(om), 1)[0]
    assert slope == pytest.approx(-3.0, abs=0.05)


# -- RWA evolution ------------------------------------------------------------------------------


def test_pi_pulse():
    psi = d.evolve_two_level_rwa(d.ket(d.DOWN), 95e6, 0.0, 0.0, 1 / (2 * 95e6))
    assert d.up_population(psi) == pytest.approx(1.0, abs=1e-12)


def test_detuned_maximum_is_half():
    om = 40e6
    t = 1 / (2 * math.hypot(om, om))
    psi = d.evolve_two_level_rwa(d.ket(d.DOWN), om, om, 0.3, t)
    assert d.up_population(psi) == pytest.approx(0.5, abs=1e-12)


@given(st.floats(0, 300e6), st.floats(0, 300e6), st.floats(0, 100e-9))
def test_chevron_symmetric_in_detuning(om, delta, t):
    a = d.up_population(d.evolve_two_level_rwa(d.ket(d.DOWN), om, delta, 0.0, t))
    b = d.up_population(d.evolve_two_level_rwa(d.ket(d.DOWN), om, -delta, 0.0, t))
    assert a == pytest.approx(b, abs=1e-12)


@given(st.floats(0, 300e6), st.floats(-300e6, 300e6), st.floats(0, 2 * math.pi), st.floats(0, 200e-9))
def test_rwa_unitary_is_unitary_and_matches_closed_form(om, delta, phase, t):
    u = d.rwa_unitary(om, delta, phase, t)
    assert np.allclose(u @ u.conj().T, np.eye(2), atol=1e-12)
    assert d.up_population(u @ d.ket(d.DOWN)) == pytest.approx(float(d.rabi_up_population(om, delta, t)), abs=1e-12)


def test_chevron_matches_four_level_integrator_sample():
    # oracle: adaptive 4-level integration (oracle) against the closed form, one detuning row
    ts = np.linspace(0, 100e-9, 101)
    h4 = d.embed_qubit(d.rwa_hamiltonian(95e6, 72e6, 0.0))
    states = d.evolve_lindblad(d.dm(d.DOWN, 4), h4, [], 0.0, method="ode", t_eval=ts, rtol=1e-10, atol=1e-12)
    assert np.max(np.abs(states[:, d.UP, d.UP].real - d.rabi_up_population(95e6, 72e6, ts))) < 1e-5


def test_raman_lambda_reduces_to_effective_rabi():
    # eliminating the trion at large detuning gives Omega = Omega_R^2 / Delta
    omega_r, delta_opt = math.sqrt(20e6 * 50e9), 50e9
    h = d.raman_lambda_hamiltonian(omega_r, delta_opt)
    ts = np.linspace(0, 60e-9, 241)
    p = d.evolve_lindblad(d.dm(d.DOWN, 4), h, [], 0.0, method="ode", t_eval=ts, rtol=1e-9, atol=1e-12)[:, d.UP, d.UP].real
    assert p.max() > 0.99
    assert ts[np.argmax(p)] == pytest.approx(1 / (2 * 20e6), rel=0.02)


# -- beyond RWA -------------------------------------------------------------------------------


def test_lab_frame_deep_rwa_pi_pulse():
    psi = d.evolve_lab_frame(d.ket(d.DOWN), 20e6, 5.8e9, 1 / (2 * 20e6))
    assert abs(d.up_population(psi) - 1.0) < 1e-3


def test_lab_frame_rejects_coarse_step():
    with pytest.raises(d.DynamicsError):
        d.evolve_lab_frame(d.ket(d.DOWN), 20e6, 5.8e9, 1e-9, max_step=1 / (10 * 5.8e9))


def _zeeman_component(rabi, duration):
    z = 5.8e9
    times = np.arange(0.0, duration, 1 / (8 * z))
    p = np.abs(d.evolve_lab_frame(d.ket(d.DOWN), rabi, z, times[-1], t_eval=times)[:, d.UP]) ** 2
    spec = np.abs(np.fft.rfft((p - p.mean()) * np.hanning(p.size)))
    f = np.fft.rfftfreq(p.size, times[1] - times[0])
    return spec[np.abs(f - z) < 0.1 * z].max() / spec.max()


@pytest.mark.slow
def test_fast_drive_has_zeeman_component():
    # reference value: 2 GHz is ~34% of the Larmor frequency; oracle: threshold from the integrator
    assert _zeeman_component(2e9, 5e-9) > 0.01


def test_free_precession_keeps_populations():
    psi0 = np.array([math.sqrt(0.3), math.sqrt(0.7)], dtype=complex)
    ts = np.linspace(0, 1e-9, 11)
    out = d.evolve_lab_frame(psi0, 0.0, 5.8e9, 1e-9, t_eval=ts)
    assert np.allclose(np.abs(out) ** 2, [0.3, 0.7], atol=1e-9)
    # in the lab frame the coherence winds at Z_h; here the frame absorbs it
    assert np.allclose(out, psi0, atol=1e-7)


def test_evolve_beyond_rwa_uses_drive():
    dr = drive(detuning=320e9, power=20e6 / 95e6, f_mw=2.9e9)
    out = d.evolve_beyond_rwa(d.ket(d.DOWN), dr, d.SpinSystem(), 25e-9, cavity=CAV)
    assert d.up_population(out) == pytest.approx(1.0, abs=1e-3)


# -- Lindblad ------------------------------------------------------------------------------------


def test_t1_decay_time_constant():
    # reference value: T1 = 21 us is the configured value
    system = d.SpinSystem()
    ts = np.linspace(0, 100e-6, 201)
    diss = d.qubit_dissipators_4level(system, include_trion_decay=False)
    states = d.evolve_lindblad(d.dm(d.UP, 4), np.zeros((4, 4)), diss, 0.0, t_eval=ts)
    fit = fit_exponential_decay(ts, states[:, d.UP, d.UP].real)
    assert fit["T"] == pytest.approx(21e-6, rel=0.01)
    assert fit["offset"] == pytest.approx(system.thermal_up_population, abs=1e-6)


def test_zero_dissipation_is_unitary():
    h2 = d.rwa_hamiltonian(60e6, 25e6, 0.7)
    rho = d.evolve_lindblad(d.dm(d.DOWN, 2), h2, [], 37e-9)
    u = d.rwa_unitary(60e6, 25e6, 0.7, 37e-9)
    assert np.max(np.abs(rho - u @ d.dm(d.DOWN, 2) @ u.conj().T)) < 1e-9


def test_negative_rate_rejected():
    with pytest.raises(d.DynamicsError):
        d.evolve_lindblad(d.dm(0), np.zeros((2, 2)), [(-1.0, d.SX)], 1e-9)


@st.composite
def lindblad_problem(draw):
    om = draw(st.floats(0, 200e6))
    delta = draw(st.floats(-200e6, 200e6))
    rates = [draw(st.floats(0, 1e8)) for _ in range(3)]
    t = draw(st.floats(0, 200e-9))
    theta = draw(st.floats(0, math.pi))
    return om, delta, rates, t, theta


@given(lindblad_problem())
def test_density_matrix_stays_physical(problem):
    om, delta, rates, t, theta = problem
    h = d.rwa_hamiltonian(om, delta, 0.2)
    lower = np.array([[0, 1], [0, 0]], dtype=complex)
    diss = [(rates[0], lower), (rates[1], lower.T), (rates[2], d.SX)]
    psi = np.array([math.cos(theta / 2), math.sin(theta / 2)], dtype=complex)
    rho = d.evolve_lindblad(psi, h, diss, t)
    d.check_density_matrix(rho, tol=1e-9)


def _rate_equation_pumping(gamma_pump, ts):
    # three-level rate equations: |up> -> trion at gamma_pump, trion -> up/down at 1:1
    gx = gy = 1e10

    def rhs(_t, p):
        up, tr, dn = p
        return [-gamma_pump * up + gx * tr, gamma_pump * up - (gx + gy) * tr, gy * tr]

    return solve_ivp(rhs, (0, ts[-1]), [1.0, 0.0, 0.0], t_eval=ts, method="LSODA", rtol=1e-10, atol=1e-12).y


def test_optical_pumping_reaches_down_monotonically():
    system = d.SpinSystem()
    w = d.pump_rabi_for_init_time(system, 3e-9)
    ts, _, states = d.pumping_trace(system, w, 40e-9, n_points=801, diagonal_strength=0.0)
    p_down = states[:, d.DOWN, d.DOWN].real
    assert p_down[-1] > 0.9999
    assert np.all(np.diff(p_down[ts > 1e-9]) > -1e-12)
    # oracle: rate-equation oracle with the pumping rate implied by the optical Rabi frequency
    w_ang = 2 * math.pi * w
    gamma_pump = w_ang**2 / system.gamma0  # incoherent excitation rate of a strongly damped transition
    oracle_down = _rate_equation_pumping(gamma_pump, ts)[2]
    late = ts > 10e-9
    assert np.max(np.abs(oracle_down[late] - p_down[late])) < 0.02


def test_pumping_time_constant_near_three_ns():
    system = d.SpinSystem()
    w = d.pump_rabi_for_init_time(system, 3e-9)
    ts, _, states = d.pumping_trace(system, w, 30e-9, n_points=601, diagonal_strength=0.0)
    bright = states[:, d.UP, d.UP].real + states[:, d.TRION_UP, d.TRION_UP].real
    m = ts > 3e-9
    assert fit_exponential_decay(ts[m], bright[m])["T"] == pytest.approx(3e-9, rel=0.1)


# -- initialisation fidelity ---------------------------------------------------------------------


def test_fidelity_lower_bound_reference_point():
    # reference value: F >= 96.7% at I_ss/I_peak = 0.033
    assert d.initialization_fidelity(0.033, lower_bound=True) == pytest.approx(0.967, abs=1e-12)


def test_fidelity_perfect_cases():
    assert d.initialization_fidelity(0.0, 1.0, 0.3) == 1.0
    assert d.initialization_fidelity(0.2, 0.0, 0.3) == 1.0


def test_simulated_initialization_default():
    res = d.simulate_initialization(d.ReadoutModel(), d.SpinSystem(), duration=20e-9)
    assert res.i_ss / res.i_peak == pytest.approx(0.033, abs=0.003)
    assert res.fidelity_lower_bound == pytest.approx(0.967, abs=0.003)
    assert res.init_time == pytest.approx(3e-9, rel=0.3)


def test_zero_peak_rejected():
    with pytest.raises(d.DynamicsError):
        d.simulate_initialization(d.ReadoutModel(rho11_initial=0.0, diagonal_strength=0.0), d.SpinSystem(t1=math.inf), pump_rabi=1e8, duration=1e-9, n_points=5)


# -- laser-induced flips ---------------------------------------------------------------------------


def test_flip_rate_reference_value():
    # reference value: 51.7 MHz drive; k = 1e-4 ns^-1/MHz gives 5.17e-3 ns^-1
    assert d.laser_flip_rate(51.7e6, d.SpinSystem(flip_coefficient=1e-4)) == pytest.approx(5.17e6, rel=1e-12)
    assert d.laser_flip_rate(0.0, d.SpinSystem()) == 0.0


def test_off_resonant_trace_relaxes_at_twice_flip_rate():
    # oracle: two-state rate equation dP/dt = gamma (1 - 2P): time constant 1/(2 gamma)
    system = d.SpinSystem(flip_coefficient=1e-4)
    om = 20e6
    gamma = d.laser_flip_rate(om, system)
    gen = d.bloch_generator(om, 400e6, 0.0, flip_rate=gamma)
    ts = np.linspace(0, 5 / (2 * gamma), 400)
    z = np.array([d.propagate_bloch(np.array([0.0, 0.0, 1.0]), gen, t)[2] for t in ts])
    fit = fit_exponential_decay(ts, 0.5 * (1 - z))
    assert fit["T"] == pytest.approx(1 / (2 * gamma), rel=0.05)
    assert fit["offset"] == pytest.approx(0.5, abs=0.01)


def _flip_only_q(rabi, k):
    system = d.SpinSystem(flip_coefficient=k, t1=math.inf)
    bath = NuclearBath(overhauser=OverhauserState(sigma=0.0), hh_enabled=False)
    return rabi_q_factor_with_bath(rabi, bath, system, 1000, np.random.default_rng(0), periods=12)["q"]


def test_flip_only_q_independent_of_power():
    qs = [_flip_only_q(om, 0.5e-4) for om in (10e6, 31.6e6, 100e6)]
    assert max(qs) / min(qs) - 1 < 0.05


def test_flip_only_q_closed_form():
    # oracle: y and z decay at 2 gamma, so T2 = 1/(2 gamma) and Q = 2 T2 f = 1/(k * 1e3)
    assert _flip_only_q(95e6, 0.5e-4) == pytest.approx(20.0, rel=0.02)


@pytest.mark.xfail(strict=True, reason="flip model gives Q = 1/(1e3 k) = 20 at k = 0.5e-4; the quoted [30, 40] window needs k ~ 0.29e-4 (see decisions ledger)")
def test_flip_only_q_in_quoted_window():
    assert 30 <= _flip_only_q(95e6, 0.5e-4) <= 40


def test_pi_fidelity_at_q35():
    # reference value: Q = 35 <-> 98.6 %
    assert pi_pulse_fidelity(35.0) == pytest.approx(0.986, abs=5e-4)


# -- Bloch propagation ---------------------------------------------------------------------------


@given(st.floats(0, 200e6), st.floats(-200e6, 200e6), st.floats(0, 2 * math.pi), st.floats(0, 100e-9))
def test_rotate_bloch_matches_unitary(om, delta, phase, t):
    u = d.rwa_unitary(om, delta, phase, t)
    r = d.rotate_bloch(np.array([0.0, 0.0, 1.0]), om, delta, phase, t)
    assert np.allclose(r, d.unitary_to_rotation(u) @ [0.0, 0.0, 1.0], atol=1e-9)
    assert np.allclose(d.propagate_bloch(np.array([0.0, 0.0, 1.0]), d.bloch_generator(om, delta, phase), t), r, atol=1e-9)


def test_spin_system_violations():
    assert d.SpinSystem().violations() == []
    assert [f for f, _ in d.SpinSystem(zeeman=6e9).violations()] == ["zeeman"]
    assert [f for f, _ in replace(d.SpinSystem(), gamma_x=1e9, gamma_y=2e10).violations()] == ["gamma"]
