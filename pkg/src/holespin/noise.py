"""Classical dephasing noise and the filter-function formalism.

Noise is a fluctuation ``delta(t)`` of the qubit frequency. Spectra are
stored in angular units: ``S(omega)`` is the two-sided spectral density of
``2 pi delta`` with ``<(2 pi delta)^2> = (1/pi) int_0^inf S d omega``. The
accumulated phase variance for a sequence with filter function ``F(omega T)``
is ``2 chi`` with::

    chi(T) = (1/pi) int_0^inf S(omega) F(omega T) / omega^2 d omega

and the ensemble visibility is ``exp(-chi)``. ``F = 2 sin^2(omega T/2)`` for
free evolution and ``8 sin^4(omega T/4)`` for a Hahn echo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.fft
from scipy.optimize import brentq

__all__ = [
    "NoiseError",
    "NoiseSpectrum",
    "DDSequence",
    "NoiseTrajectory",
    "filter_function",
    "decoherence_integral",
    "coherence_from_filter_function",
    "calibrate_amplitude",
    "cpmg_t2",
    "generate_noise_trajectory",
    "simulate_dd_sequence_timedomain",
]

TWO_PI = 2.0 * math.pi


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpectrum:
    """``S(omega) = amplitude / omega^beta`` between the cutoffs, plus extras.

    Cutoffs are in Hz (``omega = 2 pi f``). ``white_level`` adds a flat
    ``S`` over the same band. ``quasistatic_sigma`` (Hz) adds a static
    Gaussian detuning per realization, which only free evolution sees.
    """

    amplitude: float = 0.0
    beta: float = 0.45
    low_cutoff: float = 10.0
    high_cutoff: float = 100e6
    white_level: float = 0.0
    quasistatic_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.beta <= 2.0:
            raise NoiseError(f"beta={self.beta} outside [0, 2]")
        if self.low_cutoff < 0 or not self.high_cutoff > self.low_cutoff:
            raise NoiseError("cutoffs must satisfy 0 <= low < high")
        if self.amplitude < 0 or self.white_level < 0 or self.quasistatic_sigma < 0:
            raise NoiseError("noise strengths must be non-negative")

    def __call__(self, omega):
        w = np.asarray(omega, dtype=float)
        band = (w >= TWO_PI * self.low_cutoff) & (w <= TWO_PI * self.high_cutoff)
        with np.errstate(divide="ignore"):
            s = np.where(band, self.amplitude * np.abs(w) ** (-self.beta) + self.white_level, 0.0)
        return s

    def one_sided_hz(self, f):
        """One-sided PSD of ``2 pi delta`` per Hz, ``2 S(2 pi f)``."""
        return 2.0 * self(TWO_PI * np.asarray(f, dtype=float))

    def scaled(self, factor: float) -> "NoiseSpectrum":
        return replace(self, amplitude=self.amplitude * factor, white_level=self.white_level * factor)


@dataclass(frozen=True)
class DDSequence:
    """Pulse timing: ``n_pulses = 0`` is free evolution, 1 a Hahn echo, N a CPMG train."""

    n_pulses: int = 0

    def __post_init__(self):
        if self.n_pulses < 0:
            raise NoiseError("negative pulse count")

    @classmethod
    def named(cls, name: str, n: int | None = None) -> "DDSequence":
        key = name.lower()
        if key in ("free", "fid", "ramsey"):
            return cls(0)
        if key in ("hahn", "echo"):
            return cls(1)
        if key == "cpmg":
            if n is None or n < 1:
                raise NoiseError("CPMG needs n >= 1")
            return cls(n)
        raise NoiseError(f"unknown sequence {name!r}")

    def pulse_fractions(self) -> np.ndarray:
        """Pulse positions in units of ``T``: ``(j - 1/2)/N``."""
        n = self.n_pulses
        return (np.arange(1, n + 1) - 0.5) / n if n else np.zeros(0)


def filter_function(x, sequence: DDSequence) -> np.ndarray:
    """``F(x)`` with ``x = omega T`` for ideal instantaneous pi pulses."""
    x = np.asarray(x, dtype=float)
    n = sequence.n_pulses
    if n == 0:
        return 2.0 * np.sin(0.5 * x) ** 2
    if n == 1:
        return 8.0 * np.sin(0.25 * x) ** 4
    y = 1.0 + (-1.0) ** (n + 1) * np.exp(1j * x)
    for j, frac in enumerate(sequence.pulse_fractions(), start=1):
        y = y + 2.0 * (-1.0) ** j * np.exp(1j * x * frac)
    return 0.5 * np.abs(y) ** 2


def filter_function_general(x, sequence: DDSequence) -> np.ndarray:
    """Generic sum form of :func:`filter_function` (used as a cross-check of the closed forms)."""
    x = np.asarray(x, dtype=float)
    n = sequence.n_pulses
    y = 1.0 + (-1.0) ** (n + 1) * np.exp(1j * x)
    for j, frac in enumerate(sequence.pulse_fractions(), start=1):
        y = y + 2.0 * (-1.0) ** j * np.exp(1j * x * frac)
    return 0.5 * np.abs(y) ** 2


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _gauss_legendre(f, edges: np.ndarray) -> float:
    a, b = edges[:-1, None], edges[1:, None]
    x = 0.5 * (b - a) * _GL_X[None, :] + 0.5 * (a + b)
    return float(np.sum(0.5 * (b - a) * _GL_W[None, :] * f(x)))


def decoherence_integral(spectrum: NoiseSpectrum, sequence: DDSequence, T: float, *, tail_start: float = 4000.0) -> float:
    """``chi(T)`` including the quasistatic part; relative quadrature error below 1e-4.

    Substituting ``x = omega T`` the integrand is ``S(x/T) F(x) / x^2 * T``.
    Below ``x = 1`` log-spaced panels, then panels of length ``pi/4`` up to
    ``tail_start``; beyond that ``F`` is replaced by its mean ``1 + 2N``
    and the power law is integrated analytically.
    """
    if T < 0:
        raise NoiseError("negative precession time")
    if T == 0:
        return 0.0
    n = sequence.n_pulses
    chi = 0.0
    if spectrum.quasistatic_sigma and n == 0:
        chi += 0.5 * (TWO_PI * spectrum.quasistatic_sigma * T) ** 2
    if spectrum.amplitude == 0 and spectrum.white_level == 0:
        return chi
    x_lo = TWO_PI * spectrum.low_cutoff * T
    x_hi = TWO_PI * spectrum.high_cutoff * T
    if x_lo == 0 and n == 0 and spectrum.beta >= 1 and spectrum.amplitude > 0:
        raise NoiseError("free-evolution integral diverges for beta >= 1 without a low cutoff")

    def integrand(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            val = spectrum(x / T) * filter_function(x, sequence) / x**2
        return np.where(x > 0, val, 0.0)

    total = 0.0
    x_tail = max(tail_start, 200.0 * (n + 1))
    # log panels for x < 1, starting well below the region where F ~ x^2 or x^4 matters
    if x_lo < 1.0:
        start = x_lo if x_lo > 0 else 1e-12
        edges = np.geomspace(start, min(1.0, x_hi), 8 * max(1, int(math.ceil(math.log10(min(1.0, x_hi) / start)))) + 1)
        if x_lo == 0:
            # F(x)/x^2 ~ x^0 near 0 for free evolution: the [0, 1e-12] sliver is negligible
            pass
        total += _gauss_legendre(integrand, edges)
    mid_lo, mid_hi = max(x_lo, 1.0), min(x_hi, x_tail)
    if mid_hi > mid_lo:
        m = int(math.ceil((mid_hi - mid_lo) / (math.pi / 4)))
        total += _gauss_legendre(integrand, np.linspace(mid_lo, mid_hi, m + 1))
    tail_lo = max(x_lo, x_tail)
    if x_hi > tail_lo:
        mean_f = 1.0 + 2.0 * n
        b = spectrum.beta
        # int A (x/T)^-b x^-2 dx = A T^b [x^(-1-b) / (-1-b)]
        pw = spectrum.amplitude * T**b * (tail_lo ** (-1 - b) - x_hi ** (-1 - b)) / (1 + b)
        wh = spectrum.white_level * (1.0 / tail_lo - 1.0 / x_hi)
        total += mean_f * (pw + wh)
    return chi + T * total / math.pi


def coherence_from_filter_function(sequence: DDSequence, spectrum: NoiseSpectrum, T, *, t1: float | None = None) -> np.ndarray | float:
    """Visibility ``exp(-chi(T))``, times ``exp(-T / 2T1)`` when ``t1`` is given."""
    ts = np.atleast_1d(np.asarray(T, dtype=float))
    v = np.array([math.exp(-decoherence_integral(spectrum, sequence, float(t))) for t in ts])
    if t1 is not None:
        v = v * np.exp(-ts / (2.0 * t1))
    return float(v[0]) if np.ndim(T) == 0 else v


def calibrate_amplitude(spectrum: NoiseSpectrum, t2_hahn: float = 20e-6) -> NoiseSpectrum:
    """Rescale the power-law amplitude so the Hahn-echo visibility is ``1/e`` at ``t2_hahn``."""
    unit = replace(spectrum, amplitude=1.0, white_level=0.0, quasistatic_sigma=0.0)
    chi1 = decoherence_integral(unit, DDSequence(1), t2_hahn)
    if not chi1 > 0:
        raise NoiseError("spectrum has no weight inside the echo filter")
    return replace(spectrum, amplitude=1.0 / chi1)


def cpmg_t2(spectrum: NoiseSpectrum, n_pulses: int, *, t1: float | None = None, t_max: float = 1.0) -> float:
    """1/e time of the filter-function visibility for an N-pulse sequence."""
    seq = DDSequence(n_pulses)

    def g(logt):
        t = math.exp(logt)
        val = decoherence_integral(spectrum, seq, t)
        if t1 is not None:
            val += t / (2.0 * t1)
        return val - 1.0

    lo, hi = math.log(1e-12), math.log(t_max)
    if g(hi) < 0:
        return math.inf
    return math.exp(brentq(g, lo, hi, xtol=1e-10))


@dataclass
class NoiseTrajectory:
    """Realizations of ``delta(t)`` in Hz on a uniform grid; ``values`` is ``(n_real, n_t)``."""

    times: np.ndarray
    values: np.ndarray
    kind: str

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def generate_noise_trajectory(
    spectrum: NoiseSpectrum,
    duration: float,
    dt: float,
    rng: np.random.Generator,
    *,
    n_realizations: int = 1,
    kind: str = "power-law",
    bins_per_decade: int = 12,
    pad: int = 4,
) -> NoiseTrajectory:
    """Gaussian time-domain realizations of ``spectrum``.

    ``kind="power-law"``: Fourier synthesis for frequencies above the grid
    resolution (the synthesis period is ``pad`` times the
    duration), plus sinusoids with Gaussian quadratures at jittered,
    log-spaced frequencies between ``low_cutoff`` and half the grid
    resolution. The jittered frequencies are shared by the realizations
    of one call. ``kind="quasistatic"``: one constant value per realization
    drawn with ``quasistatic_sigma``.
    """
    if dt <= 0 or duration <= 0:
        raise NoiseError("duration and dt must be positive")
    n_t = int(round(duration / dt)) + 1
    times = np.arange(n_t) * dt
    if kind == "quasistatic":
        vals = rng.normal(0.0, spectrum.quasistatic_sigma, size=(n_realizations, 1)) * np.ones((1, n_t))
        return NoiseTrajectory(times, vals, kind)
    if kind != "power-law":
        raise NoiseError(f"unknown trajectory kind {kind!r}")
    if spectrum.high_cutoff > 0.5 / dt * (1 + 1e-12):
        raise NoiseError(f"dt={dt:.3g} s aliases: high cutoff {spectrum.high_cutoff:.3g} Hz exceeds Nyquist {0.5 / dt:.3g} Hz")
    n_fft = scipy.fft.next_fast_len(pad * n_t, real=True)
    df = 1.0 / (n_fft * dt)
    freqs = np.fft.rfftfreq(n_fft, dt)
    # bin k stands for [k df - df/2, k df + df/2]; the DC bin is handled by the low band
    p_bin = _band_power(spectrum, np.maximum(freqs - 0.5 * df, 0.5 * df), freqs + 0.5 * df)
    p_bin[0] = 0.0
    coef = n_fft * np.sqrt(p_bin / 4.0)
    z = rng.standard_normal((n_realizations, freqs.size)) + 1j * rng.standard_normal((n_realizations, freqs.size))
    vals = scipy.fft.irfft(z * coef, n=n_fft, axis=-1)[:, :n_t]
    # sub-resolution band: sinusoids at log-spaced, jittered frequencies shared by
    # the realizations of this call, each with independent Gaussian quadratures
    f_lo, f_hi = spectrum.low_cutoff, min(0.5 * df, spectrum.high_cutoff)
    if f_hi > f_lo and f_lo > 0:
        nb = max(1, int(math.ceil(bins_per_decade * math.log10(f_hi / f_lo))))
        edges = np.geomspace(f_lo, f_hi, nb + 1)
        power = _band_power(spectrum, edges[:-1], edges[1:])
        fk = edges[:-1] + np.diff(edges) * rng.random(nb)
        arg = TWO_PI * fk[:, None] * times[None, :]
        basis = np.concatenate([np.cos(arg), np.sin(arg)], axis=0)
        amps = rng.standard_normal((n_realizations, 2 * nb)) * np.sqrt(np.concatenate([power, power]))
        vals = vals + amps @ basis
    return NoiseTrajectory(times, vals / TWO_PI, kind)


def _band_power(spectrum: NoiseSpectrum, f_a, f_b):
    """``int S1(f) df`` over ``[f_a, f_b]`` clipped to the cutoffs (analytic, vectorized)."""
    f_a = np.clip(np.asarray(f_a, dtype=float), spectrum.low_cutoff, spectrum.high_cutoff)
    f_b = np.clip(np.asarray(f_b, dtype=float), spectrum.low_cutoff, spectrum.high_cutoff)
    w_a, w_b = TWO_PI * f_a, TWO_PI * f_b
    b = spectrum.beta
    with np.errstate(divide="ignore", invalid="ignore"):
        if abs(b - 1.0) < 1e-12:
            pl = spectrum.amplitude * np.log(w_b / w_a)
        else:
            pl = spectrum.amplitude * (w_b ** (1 - b) - w_a ** (1 - b)) / (1 - b)
    pl = np.where(w_b > w_a, pl, 0.0)
    return 2.0 * (pl + spectrum.white_level * (w_b - w_a)) / TWO_PI


def _cumulative_linear(values: np.ndarray, dt: float, t: np.ndarray) -> np.ndarray:
    """Exact integral of the piecewise-linear interpolant of ``values`` from 0 to each ``t``."""
    cum = np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(0.5 * (values[..., 1:] + values[..., :-1]) * dt, axis=-1)], axis=-1)
    n_t = values.shape[-1]
    idx = np.clip((t / dt).astype(int), 0, n_t - 2)
    h = t - idx * dt
    v0 = values[..., idx]
    v1 = values[..., idx + 1]
    return cum[..., idx] + v0 * h + (v1 - v0) * h**2 / (2.0 * dt)


def simulate_dd_sequence_timedomain(trajectory: NoiseTrajectory, sequence: DDSequence, T: float, *, return_phases: bool = False):
    """Ensemble visibility ``|<exp(i phi)>|`` from the toggled phase ``2 pi int s(t) delta(t) dt``.

    With ``return_phases=True`` the per-realization phases are returned as well.
    """
    if T > trajectory.times[-1] * (1 + 1e-12):
        raise NoiseError(f"trajectory ends at {trajectory.times[-1]:.3g} s, before T={T:.3g} s")
    marks = np.concatenate([[0.0], sequence.pulse_fractions() * T, [T]])
    cum = _cumulative_linear(trajectory.values, trajectory.dt, marks)
    seg = np.diff(cum, axis=-1)
    signs = (-1.0) ** np.arange(seg.shape[-1])
    phases = TWO_PI * (seg @ signs)
    vis = float(np.abs(np.mean(np.exp(1j * phases))))
    return (vis, phases) if return_phases else vis
