"""Hole-spin dynamics: Raman drive, two-level and four-level evolution.

Basis conventions
-----------------
The four levels are ordered ``(DOWN, UP, TRION_UP, TRION_DOWN)`` =
``(|⇓>, |⇑>, |⇑⇓,↑>, |⇑⇓,↓>)``. The effective qubit uses the first two and
the standard Pauli matrices in that order, so the Bloch vector points to
``z = +1`` for ``|⇓>`` and ``P(⇑) = (1 - z) / 2``. ``|⇑>`` is the upper
Zeeman level and the bright state for readout.

Frequencies (``rabi``, ``detuning``, ``zeeman``) are in Hz and enter
Hamiltonians multiplied by ``2*pi``; Hamiltonian matrices are ``H/hbar`` in
rad/s. Times are seconds.

The rotating-frame qubit Hamiltonian is::

    H/hbar = pi*rabi*(cos(phase) sx + sin(phase) sy) + pi*detuning*sz

with ``detuning = 2 f_mw - Z_h`` and ``phase = 2 phi_mw``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp

from .cavity import CavityParams, intensity_enhancement

logger = logging.getLogger(__name__)

H_PLANCK = 6.62607015e-34
K_BOLTZMANN = 1.380649e-23
MU_B_OVER_H = 13.996244936e9  # Hz/T

DOWN, UP, TRION_UP, TRION_DOWN = 0, 1, 2, 3

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
ID2 = np.eye(2, dtype=complex)


class DynamicsError(ValueError):
    """Invalid physical parameters for an evolution call."""


@dataclass(frozen=True)
class SpinSystem:
    """Hole spin and trion parameters.

    ``gamma_x``/``gamma_y`` are trion decay rates (1/s) into ``|⇑>`` and
    ``|⇓>``. ``flip_coefficient`` is the laser-induced flip rate per unit
    spin Rabi frequency in ns^-1/MHz. ``electron_zeeman`` is bookkeeping only
    (trion level splitting); its default is an assumption, not a measured
    value.
    """

    zeeman: float = 5.8e9
    g_factor: float | None = 0.143
    b_field: float | None = 2.9
    electron_zeeman: float = 2.0e9
    gamma_x: float = 1.0e10
    gamma_y: float = 1.0e10
    t1: float = 21e-6
    flip_coefficient: float = 1.0e-4
    temperature: float = 4.2
    stark_offset: float = 0.0

    @property
    def gamma0(self) -> float:
        return self.gamma_x + self.gamma_y

    @property
    def thermal_up_population(self) -> float:
        """Equilibrium ``P(⇑)`` at ``temperature``; 0.5 at infinite temperature."""
        if self.temperature <= 0:
            return 0.0
        return 1.0 / (1.0 + math.exp(H_PLANCK * self.zeeman / (K_BOLTZMANN * self.temperature)))

    def relaxation_rates(self) -> tuple[float, float]:
        """``(gamma_down, gamma_up)`` in 1/s with ``gamma_down + gamma_up = 1/T1``."""
        if math.isinf(self.t1):
            return 0.0, 0.0
        total = 1.0 / self.t1
        p_up = self.thermal_up_population
        return total * (1.0 - p_up), total * p_up

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if self.g_factor is not None and self.b_field is not None:
            expected = self.g_factor * MU_B_OVER_H * self.b_field
            if abs(expected - self.zeeman) > 5e-3 * self.zeeman:
                out.append(("zeeman", f"g*muB*B/h = {expected:.6g} Hz disagrees with zeeman {self.zeeman:.6g} Hz by more than 0.5%"))
        if not (self.gamma_x > 0 and self.gamma_y > 0):
            out.append(("gamma", "trion branching rates must be positive"))
        elif max(self.gamma_x, self.gamma_y) / min(self.gamma_x, self.gamma_y) > 10.0 + 1e-12:
            out.append(("gamma", "branching ratio beyond 1:10"))
        if not self.t1 > 0:
            out.append(("t1", "T1 must be positive"))
        if self.flip_coefficient < 0:
            out.append(("flip_coefficient", "flip coefficient must be non-negative"))
        return out


@dataclass(frozen=True)
class RamanDrive:
    """Two-tone Raman drive derived from a microwave-modulated CW laser.

    ``coupling`` is the optical Rabi coupling ``Omega_R/2pi`` (Hz) produced by
    1 mW at unit cavity enhancement; use :func:`calibrate_coupling` to fix it
    from one measured spin Rabi frequency.
    """

    detuning: float = 320e9
    power: float = 1.0
    f_mw: float = 2.9e9
    phi_mw: float = 0.0
    coupling: float = 3.959e9

    def optical_rabi(self, cavity: CavityParams) -> float:
        return self.coupling * math.sqrt(self.power * intensity_enhancement(self.detuning, cavity))

    def two_photon_detuning(self, system: SpinSystem) -> float:
        return 2.0 * self.f_mw - system.zeeman + system.stark_offset

    @property
    def qubit_phase(self) -> float:
        return (2.0 * self.phi_mw) % (2.0 * math.pi)


def calibrate_coupling(target_rabi: float, detuning: float, power: float, cavity: CavityParams) -> float:
    """Coupling constant that yields ``target_rabi`` at the given detuning and power."""
    if detuning == 0:
        raise DynamicsError("cannot calibrate on resonance")
    if power <= 0 or target_rabi <= 0:
        raise DynamicsError("calibration needs positive power and Rabi frequency")
    return math.sqrt(target_rabi * abs(detuning) / (power * intensity_enhancement(detuning, cavity)))


def spin_rabi_frequency(drive: RamanDrive, cavity: CavityParams) -> float:
    """Spin Rabi frequency ``Omega/2pi = (Omega_R/2pi)^2 / Delta`` in Hz.

    The optical coupling includes the cavity intensity enhancement at the
    Raman detuning, so the result is linear in power and falls as
    ``1/Delta^3`` in the Lorentzian tail.
    """
    if drive.detuning == 0:
        raise DynamicsError("resonant Raman drive: adiabatic elimination needs Delta != 0")
    if drive.power < 0:
        raise DynamicsError("negative Raman power")
    omega_r = drive.optical_rabi(cavity)
    if abs(drive.detuning) < 10.0 * omega_r:
        warnings.warn(
            f"Raman detuning {drive.detuning:.3g} Hz is not >> optical coupling {omega_r:.3g} Hz; trion population is not negligible",
            RuntimeWarning,
            stacklevel=2,
        )
    return omega_r**2 / abs(drive.detuning)


def laser_flip_rate(rabi: float, system: SpinSystem) -> float:
    """Incoherent flip rate (1/s) while the Raman drive is on.

    ``k * (Omega/2pi in MHz)`` gives ns^-1; the rate is applied through a
    symmetric ``sigma_x`` dissipator of this strength.
    """
    if rabi < 0:
        raise DynamicsError("negative Rabi frequency")
    return system.flip_coefficient * (rabi / 1e6) * 1e9


# -- closed-form two-level evolution ---------------------------------------------------------


def rwa_hamiltonian(rabi: float, detuning: float, phase: float = 0.0) -> np.ndarray:
    return math.pi * rabi * (math.cos(phase) * SX + math.sin(phase) * SY) + math.pi * detuning * SZ


def rwa_unitary(rabi, detuning, phase, t) -> np.ndarray:
    """Propagator of the rotating-frame Hamiltonian; broadcasts over its arguments."""
    rabi, detuning, phase, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (rabi, detuning, phase, t)))
    gen = np.hypot(rabi, detuning)
    theta = math.pi * gen * t
    safe = np.where(gen > 0, gen, 1.0)
    nx = np.where(gen > 0, rabi * np.cos(phase) / safe, 0.0)
    ny = np.where(gen > 0, rabi * np.sin(phase) / safe, 0.0)
    nz = np.where(gen > 0, detuning / safe, 1.0)
    c, s = np.cos(theta), np.sin(theta)
    u = np.empty(theta.shape + (2, 2), dtype=complex)
    u[..., 0, 0] = c - 1j * s * nz
    u[..., 1, 1] = c + 1j * s * nz
    u[..., 0, 1] = -1j * s * (nx - 1j * ny)
    u[..., 1, 0] = -1j * s * (nx + 1j * ny)
    return u


def _apply_unitary(state: np.ndarray, u: np.ndarray) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.shape[-1] == 2 and state.ndim >= 2 and state.shape[-2] == 2:
        return u @ state @ np.conj(np.swapaxes(u, -1, -2))
    return (u @ state[..., None])[..., 0]


def evolve_two_level_rwa(state, rabi: float, detuning: float, phase: float, t: float) -> np.ndarray:
    """Evolve a 2-vector or 2x2 density matrix under the rotating-frame Hamiltonian."""
    if rabi < 0 or t < 0:
        raise DynamicsError("rabi and t must be non-negative")
    return _apply_unitary(state, rwa_unitary(rabi, detuning, phase, t))


def rabi_up_population(rabi, detuning, t):
    """``P(⇑)`` after driving ``|⇓>`` for time ``t`` (closed form, broadcasts)."""
    rabi, detuning, t = (np.asarray(a, dtype=float) for a in (rabi, detuning, t))
    gen2 = rabi**2 + detuning**2
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(gen2 > 0, rabi**2 / np.where(gen2 > 0, gen2, 1.0), 0.0)
    return amp * np.sin(np.pi * np.sqrt(gen2) * t) ** 2


def up_population(state) -> np.ndarray:
    state = np.asarray(state)
    if state.ndim >= 2 and state.shape[-2:] == (2, 2):
        return np.real(state[..., UP, UP])
    return np.abs(state[..., UP]) ** 2


def ket(level: int, dim: int = 2) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[level] = 1.0
    return v


def dm(level: int, dim: int = 2) -> np.ndarray:
    v = ket(level, dim)
    return np.outer(v, v.conj())


# -- beyond the rotating-wave approximation ---------------------------------------------------


def lab_frame_hamiltonian(t: float, rabi: float, drive_frequency: float, phase: float, zeeman: float) -> np.ndarray:
    """Lab-frame qubit Hamiltonian with both Raman sidebands kept.

    The Raman coupling follows the two-tone intensity envelope
    ``1 + cos(2 pi f_d t - phase)``: the beat term gives the usual resonant
    drive, the constant part is an off-resonant coupling at the Larmor
    frequency that the rotating-wave approximation discards.
    """
    envelope = 1.0 + math.cos(2.0 * math.pi * drive_frequency * t - phase)
    return -math.pi * zeeman * SZ + 2.0 * math.pi * rabi * envelope * SX


def lab_frame_propagator(
    rabi: float,
    zeeman: float,
    times: Sequence[float],
    *,
    detuning: float = 0.0,
    phase: float = 0.0,
    max_step: float | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
) -> np.ndarray:
    """Rotating-frame propagators ``U(t)`` from the lab-frame Hamiltonian.

    The lab-frame solution is transformed into the frame rotating at the
    drive frequency ``zeeman + detuning`` so it can be compared directly
    with :func:`rwa_unitary`.
    """
    drive_frequency = zeeman + detuning
    limit = 1.0 / (20.0 * zeeman)
    if max_step is None:
        max_step = 1.0 / (40.0 * zeeman)
    if max_step > limit:
        raise DynamicsError(f"max_step {max_step:.3g} s is coarser than 1/(20 Z_h) = {limit:.3g} s")
    times = np.asarray(times, dtype=float)
    if times.size == 0 or np.any(times < 0):
        raise DynamicsError("need non-negative evaluation times")
    if times.max() == 0:
        return np.broadcast_to(ID2, times.shape + (2, 2)).copy()

    def rhs(tt, y):
        u = y.reshape(2, 2)
        return (-1j * lab_frame_hamiltonian(tt, rabi, drive_frequency, phase, zeeman) @ u).ravel()

    sol = solve_ivp(rhs, (0.0, float(times.max())), ID2.ravel(), method="DOP853", t_eval=times, rtol=rtol, atol=atol, max_step=max_step)
    if not sol.success:
        raise DynamicsError(f"lab-frame integration failed: {sol.message}")
    u_lab = sol.y.T.reshape(-1, 2, 2)
    # the rotating frame is R = exp(-i w t sz / 2)
    w = 2.0 * math.pi * drive_frequency * sol.t
    frame = np.zeros_like(u_lab)
    frame[:, 0, 0] = np.exp(-0.5j * w)
    frame[:, 1, 1] = np.exp(0.5j * w)
    return frame @ u_lab


def evolve_lab_frame(
    state,
    rabi: float,
    zeeman: float,
    t: float,
    *,
    detuning: float = 0.0,
    phase: float = 0.0,
    max_step: float | None = None,
    t_eval: Sequence[float] | None = None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
):
    """Integrate the lab-frame Hamiltonian; returns rotating-frame states.

    Populations are frame independent; coherences are expressed in the
    frame of :func:`evolve_two_level_rwa`.
    """
    times = [t] if t_eval is None else t_eval
    u = lab_frame_propagator(rabi, zeeman, times, detuning=detuning, phase=phase, max_step=max_step, rtol=rtol, atol=atol)
    out = np.array([_apply_unitary(state, uk) for uk in u])
    return out[0] if t_eval is None else out


def unitary_to_rotation(u: np.ndarray) -> np.ndarray:
    """SO(3) matrix ``R_ij = Tr(s_i U s_j U^dagger) / 2`` acting on Bloch vectors."""
    paulis = (SX, SY, SZ)
    ud = np.conj(np.swapaxes(u, -1, -2))
    r = np.empty(u.shape[:-2] + (3, 3))
    for i, si in enumerate(paulis):
        for j, sj in enumerate(paulis):
            r[..., i, j] = 0.5 * np.real(np.trace(si @ u @ sj @ ud, axis1=-2, axis2=-1))
    return r


def evolve_beyond_rwa(state, drive: RamanDrive, system: SpinSystem, t: float, *, cavity: CavityParams, max_step=None, t_eval=None):
    """Non-RWA evolution for a :class:`RamanDrive` (rabi, detuning and phase taken from it)."""
    return evolve_lab_frame(
        state,
        spin_rabi_frequency(drive, cavity),
        system.zeeman,
        t,
        detuning=drive.two_photon_detuning(system),
        phase=drive.qubit_phase,
        max_step=max_step,
        t_eval=t_eval,
    )


# -- Lindblad master equation -----------------------------------------------------------------

Dissipator = tuple[float, np.ndarray]


def _check_rates(dissipators: Sequence[Dissipator]) -> None:
    for rate, _ in dissipators:
        if rate < 0:
            raise DynamicsError(f"negative dissipator rate {rate}")


def liouvillian(hamiltonian: np.ndarray, dissipators: Sequence[Dissipator]) -> np.ndarray:
    """Superoperator acting on row-major ``vec(rho)``."""
    n = hamiltonian.shape[0]
    eye = np.eye(n)
    lv = -1j * (np.kron(hamiltonian, eye) - np.kron(eye, hamiltonian.T))
    for rate, op in dissipators:
        if rate == 0:
            continue
        ldl = op.conj().T @ op
        lv += rate * (np.kron(op, op.conj()) - 0.5 * np.kron(ldl, eye) - 0.5 * np.kron(eye, ldl.T))
    return lv


def lindblad_rhs(rho: np.ndarray, hamiltonian: np.ndarray, dissipators: Sequence[Dissipator]) -> np.ndarray:
    out = -1j * (hamiltonian @ rho - rho @ hamiltonian)
    for rate, op in dissipators:
        if rate == 0:
            continue
        opd = op.conj().T
        ldl = opd @ op
        out += rate * (op @ rho @ opd - 0.5 * (ldl @ rho + rho @ ldl))
    return out


def evolve_lindblad(
    rho,
    hamiltonian: np.ndarray | Callable[[float], np.ndarray],
    dissipators: Sequence[Dissipator],
    t: float,
    *,
    method: str = "expm",
    t_eval: Sequence[float] | None = None,
    rtol: float = 1e-6,
    atol: float = 1e-10,
) -> np.ndarray:
    """Evolve a density matrix under ``H`` (rad/s) and ``[(rate, L), ...]``.

    ``method="expm"`` exponentiates the Liouvillian (time-independent ``H``
    only). ``method="ode"`` integrates adaptively with the given tolerances;
    use ``rtol=1e-8`` for oracle comparisons. Returns the final state, or a
    stack of states when ``t_eval`` is given.
    """
    _check_rates(dissipators)
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = np.outer(rho, rho.conj())
    n = rho.shape[0]
    times = np.array([t] if t_eval is None else t_eval, dtype=float)
    if np.any(times < 0):
        raise DynamicsError("negative evolution time")
    if method == "expm":
        if callable(hamiltonian):
            raise DynamicsError("expm needs a time-independent Hamiltonian; use method='ode'")
        lv = liouvillian(np.asarray(hamiltonian, dtype=complex), dissipators)
        states = np.array([(scipy.linalg.expm(lv * tt) @ rho.ravel()).reshape(n, n) for tt in times])
    elif method == "ode":
        h_of_t = hamiltonian if callable(hamiltonian) else (lambda _t, _h=np.asarray(hamiltonian, dtype=complex): _h)

        def rhs(tt, y):
            return lindblad_rhs(y.reshape(n, n), h_of_t(tt), dissipators).ravel()

        sol = solve_ivp(rhs, (0.0, float(times.max())), rho.ravel(), method="DOP853", t_eval=times, rtol=rtol, atol=atol)
        if not sol.success:
            raise DynamicsError(f"Lindblad integration failed: {sol.message}")
        states = sol.y.T.reshape(len(times), n, n)
    else:
        raise DynamicsError(f"unknown method {method!r}")
    return states[0] if t_eval is None else states


def check_density_matrix(rho: np.ndarray, tol: float = 1e-9) -> None:
    """Raise if ``rho`` is not a unit-trace, Hermitian, positive matrix."""
    if abs(np.trace(rho) - 1.0) > tol:
        raise DynamicsError(f"trace {np.trace(rho).real:.12g} != 1")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise DynamicsError("density matrix is not Hermitian")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise DynamicsError("density matrix has negative eigenvalues")


def projector(i: int, j: int, dim: int = 4) -> np.ndarray:
    """``|i><j|``."""
    op = np.zeros((dim, dim), dtype=complex)
    op[i, j] = 1.0
    return op


def embed_qubit(h2: np.ndarray, trion_energy: float = 0.0) -> np.ndarray:
    """Four-level Hamiltonian whose ground block is ``h2`` and whose trions are uncoupled."""
    h = np.zeros((4, 4), dtype=complex)
    h[:2, :2] = h2
    h[2, 2] = h[3, 3] = trion_energy
    return h


def qubit_dissipators_4level(system: SpinSystem, flip_rate: float = 0.0, *, include_trion_decay: bool = True) -> list[Dissipator]:
    """T1, laser-flip and trion-decay jump operators on the four-level space."""
    g_down, g_up = system.relaxation_rates()
    sx4 = np.zeros((4, 4), dtype=complex)
    sx4[:2, :2] = SX
    out = [(g_down, projector(DOWN, UP)), (g_up, projector(UP, DOWN)), (flip_rate, sx4)]
    if include_trion_decay:
        out += [
            (system.gamma_x, projector(UP, TRION_UP)),
            (system.gamma_y, projector(DOWN, TRION_UP)),
            (system.gamma_x, projector(DOWN, TRION_DOWN)),
            (system.gamma_y, projector(UP, TRION_DOWN)),
        ]
    return out


def raman_lambda_hamiltonian(optical_rabi: float, optical_detuning: float, two_photon_detuning: float = 0.0, phase: float = 0.0) -> np.ndarray:
    """Explicit Lambda system: both ground states coupled to ``TRION_UP``.

    Each leg couples with strength ``sqrt(2)*pi*optical_rabi`` so that
    eliminating the trion at large detuning reproduces the spin Rabi
    frequency ``optical_rabi**2 / optical_detuning``; equal legs give equal
    light shifts on both ground states.
    """
    g = math.sqrt(2.0) * math.pi * optical_rabi
    h = np.zeros((4, 4), dtype=complex)
    h[DOWN, DOWN] = math.pi * two_photon_detuning
    h[UP, UP] = -math.pi * two_photon_detuning
    h[TRION_UP, TRION_UP] = -2.0 * math.pi * optical_detuning
    h[TRION_UP, DOWN] = g
    h[TRION_UP, UP] = -g * np.exp(1j * phase)
    h[DOWN, TRION_UP] = np.conj(h[TRION_UP, DOWN])
    h[UP, TRION_UP] = np.conj(h[TRION_UP, UP])
    h[TRION_DOWN, TRION_DOWN] = -2.0 * math.pi * optical_detuning
    return h


# -- optical pumping / readout ------------------------------------------------------------------


@dataclass(frozen=True)
class ReadoutModel:
    """Optical pumping readout/initialisation parameters.

    ``pump_rabi`` is the resonant optical Rabi frequency (Hz) on
    ``|⇑> <-> |⇑⇓,↑>``; ``None`` means "derive it from ``init_time``".
    ``diagonal_strength`` scales the off-resonant ``|⇓> <-> |⇑⇓,↑>`` leg
    responsible for re-pumping; it stands for the polarisation selectivity
    of the pump and defaults to the value that gives ``I_ss/I_peak = 0.033``
    at a 3 ns pumping time.
    """

    rho11_initial: float = 1.0
    theta: float | None = None
    pump_rabi: float | None = None
    init_time: float = 3e-9
    readout_duration: float = 90e-9
    detection_scale: float = 1.0
    diagonal_strength: float = 0.45
    init_fidelity: float = 1.0
    shot_noise: bool = False

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if not 0.0 <= self.rho11_initial <= 1.0:
            out.append(("rho11_initial", "must lie in [0, 1]"))
        if self.theta is not None and not 0.0 <= self.theta <= 1.0:
            out.append(("theta", "must lie in [0, 1]"))
        if not 0.0 <= self.init_fidelity <= 1.0:
            out.append(("init_fidelity", "must lie in [0, 1]"))
        if not self.readout_duration > 0:
            out.append(("readout_duration", "must be positive"))
        return out


def pump_rabi_for_init_time(system: SpinSystem, init_time: float) -> float:
    """Resonant pump Rabi frequency (Hz) giving a pumping time ``init_time``.

    Uses the steady-state trion population ``W^2/(gamma0^2 + 2 W^2)`` of a
    driven two-level transition (``W`` angular) and the pumping rate
    ``gamma_y * rho_T``.
    """
    rho_t = 1.0 / (system.gamma_y * init_time)
    if not 0 < rho_t < 0.5:
        raise DynamicsError(f"init_time {init_time:.3g} s unreachable with gamma_y={system.gamma_y:.3g}/s")
    w2 = rho_t * system.gamma0**2 / (1.0 - 2.0 * rho_t)
    return math.sqrt(w2) / (2.0 * math.pi)


def pumping_hamiltonian(system: SpinSystem, pump_rabi: float, diagonal_strength: float = 1.0) -> np.ndarray:
    """Laser resonant with ``|⇑> <-> |⇑⇓,↑>`` in its rotating frame.

    The same laser is red-detuned by ``Z_h`` from ``|⇓> <-> |⇑⇓,↑>``.
    """
    w = 2.0 * math.pi * pump_rabi
    h = np.zeros((4, 4), dtype=complex)
    h[DOWN, DOWN] = -2.0 * math.pi * system.zeeman
    h[TRION_DOWN, TRION_DOWN] = 2.0 * math.pi * system.electron_zeeman
    h[UP, TRION_UP] = h[TRION_UP, UP] = 0.5 * w
    h[DOWN, TRION_UP] = h[TRION_UP, DOWN] = 0.5 * w * diagonal_strength
    return h


@dataclass
class InitializationResult:
    times: np.ndarray
    signal: np.ndarray
    i_peak: float
    i_ss: float
    theta: float
    fidelity: float
    fidelity_lower_bound: float
    init_time: float
    final_state: np.ndarray = field(repr=False)


def initialization_fidelity(ss_over_peak: float, rho11: float = 1.0, theta: float = 0.0, gamma_x_over_gamma0: float = 0.5, *, lower_bound: bool = False) -> float:
    """Pumping fidelity ``1 - rho11*r + rho11*Theta*(gx/g0)*r`` with ``r = I_ss/I_peak``.

    ``lower_bound=True`` sets ``rho11 = 1`` and drops the last term.
    """
    if lower_bound:
        return 1.0 - ss_over_peak
    return 1.0 - rho11 * ss_over_peak + rho11 * theta * gamma_x_over_gamma0 * ss_over_peak


def pumping_trace(system: SpinSystem, pump_rabi: float, duration: float, *, up_population: float = 1.0, n_points: int = 401, diagonal_strength: float = 1.0):
    """Fluorescence (rate ``gamma_x * rho_T``) and states during a pumping pulse."""
    h = pumping_hamiltonian(system, pump_rabi, diagonal_strength)
    lv = liouvillian(h, qubit_dissipators_4level(system))
    times = np.linspace(0.0, duration, n_points)
    rho0 = up_population * dm(UP, 4) + (1.0 - up_population) * dm(DOWN, 4)
    step = scipy.linalg.expm(lv * (times[1] - times[0]))
    states = np.empty((n_points, 4, 4), dtype=complex)
    v = rho0.ravel()
    for k in range(n_points):
        states[k] = v.reshape(4, 4)
        v = step @ v
    emission = system.gamma_x * np.real(states[:, TRION_UP, TRION_UP])
    return times, emission, states


def simulate_initialization(
    readout: ReadoutModel,
    system: SpinSystem,
    pump_rabi: float | None = None,
    duration: float = 20e-9,
    *,
    n_points: int = 801,
    lower_bound: bool = True,
) -> InitializationResult:
    """Transient pumping signal and the resulting initialisation fidelity.

    ``I_peak`` is the signal maximum, ``I_ss`` its value at the end of the
    pulse, and the 1/e time is measured from the peak on the
    background-subtracted trace.
    """
    if duration <= 0:
        raise DynamicsError("duration must be positive")
    if pump_rabi is None:
        pump_rabi = readout.pump_rabi if readout.pump_rabi is not None else pump_rabi_for_init_time(system, readout.init_time)
    times, emission, states = pumping_trace(
        system, pump_rabi, duration, up_population=readout.rho11_initial, n_points=n_points, diagonal_strength=readout.diagonal_strength
    )
    signal = readout.detection_scale * emission * 1e-9  # counts per ns bin
    k_peak = int(np.argmax(signal))
    i_peak = float(signal[k_peak])
    i_ss = float(signal[-1])
    if i_peak <= 0:
        raise DynamicsError("I_peak = 0: fidelity undefined")
    final = states[-1]
    p_up, p_down = np.real(final[UP, UP]), np.real(final[DOWN, DOWN])
    theta = readout.theta if readout.theta is not None else float(p_down / (p_up + p_down))
    ratio = i_ss / i_peak
    fid = initialization_fidelity(ratio, readout.rho11_initial, theta, system.gamma_x / system.gamma0)
    fid_lb = initialization_fidelity(ratio, lower_bound=True)
    excess = signal[k_peak:] - i_ss
    below = np.nonzero(excess <= excess[0] / math.e)[0]
    init_time = float(times[k_peak + below[0]] - times[k_peak]) if below.size else float("inf")
    return InitializationResult(times, signal, i_peak, i_ss, theta, fid if not lower_bound else fid_lb, fid_lb, init_time, final)


# -- Bloch-vector propagation used by the experiment runner -------------------------------------


def bloch_generator(rabi, detuning, phase, *, flip_rate=0.0, gamma_down=0.0, gamma_up=0.0, depolarizing=0.0) -> np.ndarray:
    """Affine generator on ``(x, y, z, 1)`` for the rotating-frame Bloch equations.

    Parameters broadcast; the result has shape ``broadcast + (4, 4)``.
    """
    rabi, detuning, phase, flip_rate, depolarizing = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (rabi, detuning, phase, flip_rate, depolarizing))
    )
    wx = 2.0 * np.pi * rabi * np.cos(phase)
    wy = 2.0 * np.pi * rabi * np.sin(phase)
    wz = 2.0 * np.pi * detuning
    g = np.zeros(rabi.shape + (4, 4))
    g[..., 0, 1], g[..., 0, 2] = -wz, wy
    g[..., 1, 0], g[..., 1, 2] = wz, -wx
    g[..., 2, 0], g[..., 2, 1] = -wy, wx
    t1 = gamma_down + gamma_up
    g[..., 0, 0] = -0.5 * t1 - depolarizing
    g[..., 1, 1] = -0.5 * t1 - 2.0 * flip_rate - depolarizing
    g[..., 2, 2] = -t1 - 2.0 * flip_rate - depolarizing
    # relaxation pushes z toward (g_down - g_up)/(g_down + g_up); |⇓> is z = +1
    g[..., 2, 3] = gamma_down - gamma_up
    return g


def propagate_bloch(r: np.ndarray, generator: np.ndarray, t) -> np.ndarray:
    """Apply ``expm(generator * t)`` to Bloch vectors ``r`` (shape ``(..., 3)``)."""
    t = np.asarray(t, dtype=float)
    prop = scipy.linalg.expm(generator * t[..., None, None]) if np.any(t) else None
    if prop is None:
        return np.array(r, copy=True)
    rh = np.concatenate([r, np.ones(r.shape[:-1] + (1,))], axis=-1)
    return np.einsum("...ij,...j->...i", prop, rh)[..., :3]


def rotate_bloch(r: np.ndarray, rabi, detuning, phase, t) -> np.ndarray:
    """Dissipation-free rotation (Rodrigues) of Bloch vectors; broadcasts."""
    wx = 2.0 * np.pi * np.asarray(rabi) * np.cos(phase)
    wy = 2.0 * np.pi * np.asarray(rabi) * np.sin(phase)
    wz = 2.0 * np.pi * np.asarray(detuning, dtype=float)
    wx, wy, wz = np.broadcast_arrays(wx, wy, wz)
    w = np.sqrt(wx**2 + wy**2 + wz**2)
    angle = w * t
    safe = np.where(w > 0, w, 1.0)
    k = np.stack([wx / safe, wy / safe, wz / safe], axis=-1)
    k = np.where((w > 0)[..., None], k, np.array([0.0, 0.0, 1.0]))
    c, s = np.cos(angle)[..., None], np.sin(angle)[..., None]
    kxr = np.cross(k, r)
    kdr = np.sum(k * r, axis=-1, keepdims=True)
    return r * c + kxr * s + k * kdr * (1.0 - c)
