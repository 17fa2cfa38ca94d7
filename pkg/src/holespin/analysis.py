"""Fitting and spectral analysis of simulated datasets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

__all__ = [
    "FitError",
    "FitResult",
    "fit_stretched_exponential",
    "fit_damped_oscillation",
    "fit_power_law",
    "fit_exponential_decay",
    "envelope_fft",
    "SpectralDistribution",
    "pi_pulse_fidelity",
    "q_factor",
]


class FitError(RuntimeError):
    """A fit did not converge or the data carry no usable signal."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class FitResult:
    model: str
    params: dict[str, float]
    errors: dict[str, float]
    residual_norm: float
    converged: bool = True
    flags: set[str] = field(default_factory=set)

    def __getitem__(self, key: str) -> float:
        return self.params[key]

    def report(self) -> str:
        lines = [f"model: {self.model}", f"converged: {self.converged}", f"residual_norm: {self.residual_norm!r}"]
        for k, v in self.params.items():
            lines.append(f"{k}: {v!r} +/- {self.errors.get(k, float('nan'))!r}")
        if self.flags:
            lines.append("flags: " + ",".join(sorted(self.flags)))
        return "\n".join(lines) + "\n"


def _errors(pcov, names):
    if pcov is None or not np.all(np.isfinite(pcov)):
        return {n: math.inf for n in names}
    return {n: float(math.sqrt(max(pcov[i, i], 0.0))) for i, n in enumerate(names)}


def _stretched(t, a, t2, alpha):
    return a * np.exp(-((np.abs(t) / t2) ** alpha))


def fit_stretched_exponential(times, visibilities, *, alpha: float | None = None, sigma=None) -> FitResult:
    """Fit ``A exp[-(t/T2)^alpha]``.

    ``alpha`` free in [0.3, 3] unless fixed by the caller (``alpha=2`` gives
    a Gaussian fit). Data that never decay raise :class:`FitError`; the
    ``"infinite_t2"`` flag is set when the decay is unresolved.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(visibilities, dtype=float)
    if t.size < 8 or t.size != y.size:
        raise FitError("need at least 8 (t, visibility) pairs")
    if np.any(y < -0.05) or np.any(y > 1.05):
        raise FitError("visibilities outside [-0.05, 1.05]")
    a0 = float(y[np.argmin(t)]) or 1.0
    if np.ptp(y) < 1e-9:
        raise FitError("constant data: no decay to fit", {"infinite_t2": True})
    below = np.nonzero(y < a0 / math.e)[0]
    t2_0 = float(t[below[0]]) if below.size else float(t.max()) * 2.0
    t2_0 = max(t2_0, float(np.min(t[t > 0])) if np.any(t > 0) else 1.0)
    if alpha is None:
        f = _stretched
        p0, lo, hi = [a0, t2_0, 1.5], [0.0, 0.0, 0.3], [2.0, np.inf, 3.0]
        names = ["A", "T2", "alpha"]
    else:
        def f(tt, a, t2):
            return _stretched(tt, a, t2, alpha)
        p0, lo, hi = [a0, t2_0], [0.0, 0.0], [2.0, np.inf]
        names = ["A", "T2"]
    try:
        popt, pcov = curve_fit(f, t, y, p0=p0, bounds=(lo, hi), sigma=sigma, maxfev=20000, x_scale="jac")
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"stretched-exponential fit failed: {exc}", {"p0": p0}) from exc
    params = dict(zip(names, map(float, popt)))
    if alpha is not None:
        params["alpha"] = float(alpha)
    res = float(np.linalg.norm(f(t, *popt) - y))
    flags = set()
    if params["T2"] > 10 * t.max():
        flags.add("infinite_t2")
    return FitResult("stretched_exponential", params, _errors(pcov, names), res, True, flags)


def fit_exponential_decay(times, values) -> FitResult:
    """Fit ``offset + amplitude * exp(-t / T)`` (relaxation curves, pumping transients)."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.size < 4 or t.size != y.size:
        raise FitError("need at least 4 points")
    if np.ptp(y) == 0:
        raise FitError("constant data: no decay to fit")
    c0 = float(y[-1])
    a0 = float(y[0] - c0)
    target = c0 + a0 / math.e
    cross = np.nonzero((y - target) * np.sign(a0) < 0)[0]
    tau0 = float(t[cross[0]] - t[0]) if cross.size else float(np.ptp(t))
    tau0 = max(tau0, float(np.ptp(t)) / t.size)

    def f(tt, a, tau, c):
        return a * np.exp(-(tt - t[0]) / tau) + c

    try:
        popt, pcov = curve_fit(f, t, y, p0=[a0, tau0, c0], maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"exponential fit failed: {exc}", {"p0": [a0, tau0, c0]}) from exc
    names = ["amplitude", "T", "offset"]
    res = float(np.linalg.norm(f(t, *popt) - y))
    return FitResult("exponential_decay", dict(zip(names, map(float, popt))), _errors(pcov, names), res)


def q_factor(t2: float, frequency: float) -> float:
    """Oscillation quality factor ``2 T2 f``."""
    return 2.0 * t2 * frequency


def pi_pulse_fidelity(q: float) -> float:
    """``(1 + V(t_pi)) / 2`` for an exponential envelope, ``V(t_pi) = exp(-1/Q)``."""
    if math.isinf(q):
        return 1.0
    return 0.5 * (1.0 + math.exp(-1.0 / q))


def _peak_frequency(t, y):
    dt = t[1] - t[0]
    spec = np.abs(np.fft.rfft(y - y.mean(), n=8 * len(y)))
    freqs = np.fft.rfftfreq(8 * len(y), dt)
    k = int(np.argmax(spec[1:])) + 1
    # noise floor: median of the spectrum away from the peak
    floor = float(np.median(spec[1:]))
    return freqs[k], spec[k], floor


def fit_damped_oscillation(times, signal, *, envelope: str = "exponential") -> FitResult:
    """Fit ``offset + amplitude * env(t) * cos(2 pi f t + phase)``.

    The frequency is seeded from the FFT peak and the decay from a
    log-linear fit of the peak envelope. ``params["q"]`` is ``2 T2 f``; an
    undamped trace reports ``T2 = Q = inf`` with the ``"undamped"`` flag.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    if t.size < 8:
        raise FitError("need at least 8 samples")
    if not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-6):
        raise FitError("oscillation fit expects a uniform time grid")
    if np.ptp(y) == 0:
        raise FitError("no oscillation detected: constant signal")
    # work in units of the signal span so convergence does not depend on its scale
    scale = float(np.ptp(y))
    y = y / scale
    f0, peak, floor = _peak_frequency(t, y)
    if peak < 3.0 * floor:
        raise FitError("no oscillation detected: spectral peak below 3x noise floor", {"peak": peak, "floor": floor})
    if f0 * np.ptp(t) < 3.0:
        raise FitError("fewer than three oscillation periods visible", {"f0": f0})
    offset0 = float(np.mean(y[len(y) // 2:]))
    amp0 = 0.5 * float(np.ptp(y[: max(4, len(y) // 8)]))
    # decay seed: log-linear regression of per-period peak excursions
    period = max(1, int(round(1.0 / (f0 * (t[1] - t[0])))))
    n_per = len(y) // period
    tc, ex = [], []
    for k in range(n_per):
        seg = np.abs(y[k * period:(k + 1) * period] - offset0)
        if seg.max() > 0:
            tc.append(t[k * period + int(np.argmax(seg))])
            ex.append(seg.max())
    rate0 = 0.0
    if len(ex) >= 3:
        slope = np.polyfit(tc, np.log(ex), 1)[0]
        rate0 = max(-slope, 0.0)
    phase0 = 0.0 if y[0] - offset0 >= 0 else math.pi
    gaussian = envelope == "gaussian"

    def model(tt, amp, f, rate, phase, off):
        env = np.exp(-((rate * tt) ** 2)) if gaussian else np.exp(-rate * tt)
        return off + amp * env * np.cos(2.0 * np.pi * f * tt + phase)

    p0 = [max(amp0, 1e-12), f0, rate0, phase0, offset0]
    lo = [0.0, 0.5 * f0, 0.0, -2 * math.pi, -np.inf]
    hi = [np.inf, 1.5 * f0, np.inf, 2 * math.pi, np.inf]
    try:
        popt, pcov = curve_fit(model, t, y, p0=p0, bounds=(lo, hi), maxfev=20000, x_scale="jac")
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"damped-oscillation fit failed: {exc}", {"p0": p0}) from exc
    res = float(np.linalg.norm(model(t, *popt) - y)) * scale
    amp, f, rate, phase, off = map(float, popt)
    errs = _errors(pcov, ["amplitude", "frequency", "rate", "phase", "offset"])
    amp, off = amp * scale, off * scale
    errs["amplitude"] *= scale
    errs["offset"] *= scale
    flags = set()
    if rate * np.ptp(t) < 1e-6:
        t2 = math.inf
        flags.add("undamped")
    else:
        t2 = 1.0 / rate
    q = q_factor(t2, f)
    t2_err = errs["rate"] / rate**2 if rate > 0 else math.inf
    q_err = q * math.hypot(t2_err / t2, errs["frequency"] / f) if math.isfinite(q) else math.inf
    params = {"frequency": f, "T2": t2, "amplitude": amp, "offset": off, "phase": phase, "q": q}
    errors = {"frequency": errs["frequency"], "T2": t2_err, "amplitude": errs["amplitude"], "offset": errs["offset"], "phase": errs["phase"], "q": q_err}
    return FitResult("damped_oscillation_" + ("gaussian" if gaussian else "exponential"), params, errors, res, True, flags)


def fit_power_law(x, y) -> FitResult:
    """Fit ``y = prefactor * x**exponent`` by least squares in log-log space."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 4 or x.size != y.size:
        raise FitError("need at least 4 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise FitError("power-law fit needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    coef, cov = np.polyfit(lx, ly, 1, cov="unscaled")
    resid = ly - np.polyval(coef, lx)
    dof = max(x.size - 2, 1)
    cov = cov * float(resid @ resid) / dof
    slope, icpt = map(float, coef)
    params = {"exponent": slope, "prefactor": math.exp(icpt)}
    errors = {"exponent": math.sqrt(max(cov[0, 0], 0.0)), "prefactor": math.exp(icpt) * math.sqrt(max(cov[1, 1], 0.0))}
    return FitResult("power_law", params, errors, float(np.linalg.norm(resid)))


@dataclass
class SpectralDistribution:
    frequency: np.ndarray
    amplitude: np.ndarray
    width: float
    peak_frequency: float
    fit: FitResult | None = None


def envelope_fft(times, visibilities, *, pad: int = 16, fit_window: float | None = None) -> SpectralDistribution:
    """Spectral distribution of a decay envelope and the Gaussian width of its central feature.

    The baseline is the mean of the last tenth of the trace (not the overall
    mean, which would carve a notch into a decaying envelope's spectrum).
    ``width`` is the fitted standard deviation in Hz; ``peak_frequency``
    the location of the spectral maximum.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(visibilities, dtype=float)
    if t.size < 8:
        raise FitError("need at least 8 samples")
    dt = np.diff(t)
    if not np.allclose(dt, dt[0], rtol=1e-6, atol=0):
        raise FitError("non-uniform time grid: resample before envelope_fft")
    base = float(np.mean(v[-max(1, v.size // 10):]))
    n = pad * v.size
    spec = np.fft.rfft(v - base, n=n).real * dt[0]
    freq = np.fft.rfftfreq(n, dt[0])
    k_peak = int(np.argmax(np.abs(spec)))
    f_peak = float(freq[k_peak])
    if fit_window is None:
        # central feature: until the spectrum first drops below 5% of its peak
        ref = abs(spec[k_peak])
        k_hi = k_peak + int(np.argmax(np.abs(spec[k_peak:]) < 0.05 * ref)) or len(spec) - 1
        m = slice(0, max(k_hi * 2, 8))
    else:
        m = freq <= f_peak + fit_window
    ff, ss = freq[m], spec[m]
    width_guess = max(abs(float(freq[min(len(freq) - 1, k_peak + 1)])), float(freq[1]))
    half = np.nonzero(np.abs(ss) < 0.5 * abs(spec[k_peak]))[0]
    half = half[ff[half] > f_peak] if half.size else half
    if half.size:
        width_guess = max(float(ff[half[0]] - f_peak) / 1.1774, freq[1])

    def gauss(f, a, mu, s):
        return a * np.exp(-0.5 * ((f - mu) / s) ** 2)

    try:
        popt, pcov = curve_fit(gauss, ff, ss, p0=[spec[k_peak], f_peak, width_guess], maxfev=20000)
        fit = FitResult("gaussian_spectrum", {"amplitude": float(popt[0]), "center": float(popt[1]), "sigma": abs(float(popt[2]))},
                        _errors(pcov, ["amplitude", "center", "sigma"]), float(np.linalg.norm(gauss(ff, *popt) - ss)))
        width = abs(float(popt[2]))
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"spectral Gaussian fit failed: {exc}") from exc
    return SpectralDistribution(freq, spec, width, f_peak, fit)
