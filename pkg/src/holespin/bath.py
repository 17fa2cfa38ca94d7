"""Semiclassical nuclear bath: Overhauser detuning, flip-flop channel, cooling.

The bath acts on the hole as a single scalar detuning (Hz) added to the
two-photon detuning. It is quasistatic: one value per shot. A narrowed
bath produced by feedback cooling is not Gaussian, so an
:class:`OverhauserState` can carry an explicit sample pool that later draws
resample from.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dynamics import SpinSystem, bloch_generator, laser_flip_rate

__all__ = [
    "NuclearSpecies",
    "DEFAULT_SPECIES",
    "OverhauserState",
    "NuclearBath",
    "CoolingProtocol",
    "CoolingTrajectory",
    "BathError",
    "larmor_frequency",
    "sigma_from_t2star",
    "t2star_from_sigma",
    "sample_overhauser",
    "hartmann_hahn_mismatch",
    "hartmann_hahn_rate",
    "bloch_trace",
    "rabi_trace_with_bath",
    "rabi_q_factor_with_bath",
    "run_cooling",
    "heating_delay_probe",
]


class BathError(ValueError):
    pass


@dataclass(frozen=True)
class NuclearSpecies:
    name: str
    gyromagnetic_ratio: float  # Hz/T
    abundance_weight: float = 1.0


# Textbook gyromagnetic ratios gamma/2pi.
DEFAULT_SPECIES: tuple[NuclearSpecies, ...] = (
    NuclearSpecies("In-115", 9.3856e6, 1.0),
    NuclearSpecies("As-75", 7.3150e6, 1.0),
    NuclearSpecies("Ga-69", 10.2478e6, 0.6),
    NuclearSpecies("Ga-71", 13.0208e6, 0.4),
)


def larmor_frequency(species: NuclearSpecies, b_field: float) -> float:
    return species.gyromagnetic_ratio * b_field


def sigma_from_t2star(t2star: float) -> float:
    """Detuning spread (Hz) whose Gaussian average decays as ``exp[-(t/T2*)^2]``."""
    return math.sqrt(2.0) / (2.0 * math.pi * t2star)


def t2star_from_sigma(sigma: float) -> float:
    return math.inf if sigma == 0 else math.sqrt(2.0) / (2.0 * math.pi * sigma)


@dataclass(frozen=True)
class OverhauserState:
    """Quasistatic Overhauser detuning distribution.

    ``samples`` (optional) replaces the Gaussian by an empirical pool, e.g.
    the outcome of :func:`run_cooling`.
    """

    mean: float = 0.0
    sigma: float = field(default_factory=lambda: sigma_from_t2star(28e-9))
    set_point: float = 0.0
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma < 0:
            raise BathError(f"negative Overhauser sigma {self.sigma}")

    @property
    def t2star(self) -> float:
        return t2star_from_sigma(self.sigma)

    @classmethod
    def from_samples(cls, samples: np.ndarray, set_point: float = 0.0) -> "OverhauserState":
        samples = np.asarray(samples, dtype=float)
        return cls(float(samples.mean()), float(samples.std()), set_point, samples)


def sample_overhauser(state: OverhauserState, rng: np.random.Generator, size=None):
    """Draw quasistatic Overhauser detunings (Hz), one per shot."""
    if state.samples is not None:
        return rng.choice(state.samples, size=size)
    if state.sigma == 0:
        return state.mean if size is None else np.full(size, state.mean)
    return rng.normal(state.mean, state.sigma, size=size)


@dataclass(frozen=True)
class NuclearBath:
    """Bath species, field and the Hartmann-Hahn damping channel.

    ``hh_strength`` (1/s) is the peak extra depolarising rate when the
    dressed-spin splitting matches a Larmor frequency; ``hh_width`` (Hz) is
    the Gaussian width of each resonance.
    """

    species: tuple[NuclearSpecies, ...] = DEFAULT_SPECIES
    b_field: float = 2.9
    overhauser: OverhauserState = field(default_factory=OverhauserState)
    hh_strength: float = 5e6
    hh_width: float = 0.5e6
    hh_enabled: bool = True

    def larmor_frequencies(self) -> np.ndarray:
        return np.array([larmor_frequency(s, self.b_field) for s in self.species])

    def weights(self) -> np.ndarray:
        return np.array([s.abundance_weight for s in self.species])

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if self.b_field < 0:
            out.append(("b_field", "field must be non-negative"))
        if self.hh_strength < 0:
            out.append(("hh_strength", "rate must be non-negative"))
        if not self.hh_width > 0:
            out.append(("hh_width", "width must be positive"))
        for s in self.species:
            if s.abundance_weight < 0:
                out.append(("species", f"{s.name}: negative abundance weight"))
        return out


def hartmann_hahn_mismatch(rabi, detuning, species: NuclearSpecies, b_field: float):
    """Dressed-spin splitting minus nuclear Larmor frequency (Hz)."""
    if np.any(np.asarray(rabi) < 0) or b_field < 0:
        raise BathError("Rabi frequency and field must be non-negative")
    return np.hypot(rabi, detuning) - larmor_frequency(species, b_field)


def hartmann_hahn_rate(rabi, detuning, bath: NuclearBath):
    """Extra depolarising rate (1/s) of the flip-flop channel; broadcasts."""
    if not bath.hh_enabled or bath.hh_strength == 0:
        return np.zeros(np.broadcast(np.asarray(rabi), np.asarray(detuning)).shape)
    gen = np.hypot(rabi, detuning)[..., None]
    mism = gen - bath.larmor_frequencies()
    lor = np.exp(-0.5 * (mism / bath.hh_width) ** 2)
    return bath.hh_strength * np.sum(bath.weights() * lor, axis=-1)


def bloch_trace(generators: np.ndarray, r0: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Bloch vectors ``expm(G t) r0`` for many ``t`` via eigendecomposition.

    ``generators`` has shape ``(n, 4, 4)``; returns ``(n, len(times), 3)``.
    """
    w, v = np.linalg.eig(generators)
    rh = np.broadcast_to(np.append(r0, 1.0), generators.shape[:-1])
    c = np.linalg.solve(v, rh[..., None])[..., 0]
    phase = np.exp(w[:, None, :] * np.asarray(times)[None, :, None])
    out = np.einsum("nij,ntj->nti", v, phase * c[:, None, :])
    return out.real[..., :3]


def rabi_trace_with_bath(
    rabi: float,
    bath: NuclearBath,
    system: SpinSystem,
    times: np.ndarray,
    shots: int,
    rng: np.random.Generator,
    *,
    detuning: float = 0.0,
    include_flips: bool = True,
    include_t1: bool = True,
) -> np.ndarray:
    """Shot-averaged ``P(⇑)`` of a resonant Rabi experiment starting in ``|⇓>``."""
    deltas = detuning + sample_overhauser(bath.overhauser, rng, size=shots)
    gamma = laser_flip_rate(rabi, system) if include_flips else 0.0
    g_down, g_up = system.relaxation_rates() if include_t1 else (0.0, 0.0)
    gens = bloch_generator(
        np.full(shots, rabi), deltas, 0.0, flip_rate=gamma, gamma_down=g_down, gamma_up=g_up,
        depolarizing=hartmann_hahn_rate(rabi, deltas, bath),
    )
    z = bloch_trace(gens, np.array([0.0, 0.0, 1.0]), times)[..., 2]
    return 0.5 * (1.0 - z.mean(axis=0))


def rabi_q_factor_with_bath(
    rabi: float,
    bath: NuclearBath,
    system: SpinSystem,
    shots: int,
    rng: np.random.Generator,
    *,
    periods: float = 15.0,
    points_per_period: int = 24,
    include_flips: bool = True,
):
    """Fit the Rabi quality factor ``Q = 2 T2 f`` of a simulated Rabi trace.

    Returns the :class:`~holespin.analysis.FitResult` of the damped-cosine
    fit; ``result.params["q"]`` holds Q.
    """
    from .analysis import fit_damped_oscillation

    if shots < 1000:
        raise BathError("rabi_q_factor_with_bath needs at least 1000 shots")
    if rabi <= 0:
        raise BathError("Rabi frequency must be positive")
    n = int(round(periods * points_per_period))
    times = np.arange(n) / (points_per_period * rabi)
    signal = rabi_trace_with_bath(rabi, bath, system, times, shots, rng, include_flips=include_flips)
    return fit_damped_oscillation(times, signal)


# -- feedback cooling ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CoolingProtocol:
    """Feedback-cooling protocol.

    One block is ``n_cycles`` sense-and-correct cycles with the sensing time
    ramped linearly from ``tau_min`` to ``tau_max``; ``repetitions`` blocks
    are applied back to back. ``flip_size`` is the Overhauser step (Hz) of
    one effective nuclear flip and ``flip_efficiency`` its probability per
    cycle. ``diffusion`` (Hz per cycle, default 0) adds a random walk.
    """

    mode: str = "quantum_sensing"
    n_cycles: int = 35
    tau_min: float = 10e-9
    tau_max: float = 600e-9
    tc: float = 60e-9
    omega_c: float = 26e6
    readout_len: float = 90e-9
    flip_efficiency: float = 0.5
    flip_size: float = 0.4e6
    repetitions: int = 25
    diffusion: float = 0.0

    def violations(self) -> list[tuple[str, str]]:
        out = []
        if self.mode not in ("quantum_sensing", "rabi_drive"):
            out.append(("mode", f"unknown cooling mode {self.mode!r}"))
        if self.tau_min > self.tau_max:
            out.append(("tau", f"tau_min {self.tau_min:.3g} s > tau_max {self.tau_max:.3g} s"))
        for name in ("tau_min", "tau_max", "tc", "readout_len"):
            if not getattr(self, name) > 0:
                out.append((name, "duration must be positive"))
        if not 0.0 <= self.flip_efficiency <= 1.0:
            out.append(("flip_efficiency", "must lie in [0, 1]"))
        if self.n_cycles < 1 or self.repetitions < 1:
            out.append(("n_cycles", "need at least one cycle"))
        if self.flip_size < 0 or self.diffusion < 0:
            out.append(("flip_size", "must be non-negative"))
        return out

    def sensing_times(self) -> np.ndarray:
        if self.n_cycles == 1:
            return np.array([self.tau_min])
        return np.linspace(self.tau_min, self.tau_max, self.n_cycles)

    @property
    def cycle_duration(self) -> np.ndarray:
        return self.sensing_times() + self.tc + self.readout_len


@dataclass
class CoolingTrajectory:
    cycle: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    final: OverhauserState

    def rows(self):
        return zip(self.cycle.tolist(), self.mean.tolist(), self.sigma.tolist())


def feedback_direction(offset, tau):
    """Sign of the correction: negative when the sensed phase lies in the first half-turn."""
    return -np.sign(np.sin(2.0 * np.pi * offset * tau))


def run_cooling(protocol: CoolingProtocol, state: OverhauserState, rng: np.random.Generator, *, n_runs: int = 1000) -> CoolingTrajectory:
    """Apply the cooling protocol to ``n_runs`` independent bath samples.

    Returns per-cycle ensemble mean and standard deviation (cycle 0 is the
    initial distribution) and the cooled sample pool.
    """
    bad = protocol.violations()
    if bad:
        raise BathError("; ".join(f"{k}: {m}" for k, m in bad))
    x = np.asarray(sample_overhauser(state, rng, size=n_runs), dtype=float)
    sp = state.set_point
    if protocol.mode == "quantum_sensing" and protocol.tau_max * np.std(x - sp) > 10.0:
        warnings.warn("tau_max * sigma >> 1: sensed phase wraps, feedback sign is ambiguous", RuntimeWarning, stacklevel=2)
    taus = protocol.sensing_times()
    total = protocol.n_cycles * protocol.repetitions
    means = np.empty(total + 1)
    sigmas = np.empty(total + 1)
    means[0], sigmas[0] = x.mean(), x.std()
    k = 0
    for _ in range(protocol.repetitions):
        for tau in taus:
            flip = rng.random(n_runs) < protocol.flip_efficiency
            if protocol.mode == "quantum_sensing":
                direction = feedback_direction(x - sp, tau)
            else:
                # dressed-state flip-flops pick the right sign more reliably far from the set point
                off = x - sp
                p_toward = 0.5 * (1.0 + np.abs(off) / np.hypot(off, protocol.omega_c))
                toward = rng.random(n_runs) < p_toward
                direction = np.where(toward, -1.0, 1.0) * np.sign(off)
            x = x + protocol.flip_size * direction * flip
            if protocol.diffusion:
                x = x + rng.normal(0.0, protocol.diffusion, n_runs)
            k += 1
            means[k], sigmas[k] = x.mean(), x.std()
    return CoolingTrajectory(np.arange(total + 1), means, sigmas, OverhauserState.from_samples(x, sp))


def heating_delay_probe(state: OverhauserState, delay: float, *, sigma_thermal: float, tau_heat: float = math.inf) -> OverhauserState:
    """Re-thermalisation after a wait: ``sigma`` relaxes toward ``sigma_thermal``."""
    if delay < 0:
        raise BathError("negative delay")
    if delay == 0 or math.isinf(tau_heat):
        return state
    frac = 1.0 - math.exp(-delay / tau_heat)
    sigma = state.sigma + (sigma_thermal - state.sigma) * frac
    samples = None
    if state.samples is not None:
        scale = sigma / state.sigma if state.sigma > 0 else 1.0
        samples = state.mean + (state.samples - state.mean) * scale
    return replace(state, sigma=sigma, samples=samples)


def species_by_name(names: Sequence[str]) -> tuple[NuclearSpecies, ...]:
    table = {s.name: s for s in DEFAULT_SPECIES}
    unknown = [n for n in names if n not in table]
    if unknown:
        raise BathError(f"unknown species {unknown}; known: {sorted(table)}")
    return tuple(table[n] for n in names)
