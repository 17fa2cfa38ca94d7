"""One-sided Fabry-Perot intensity enhancement.

Near a resonance the intra-cavity intensity of a one-sided cavity
(back mirror ``r2 = 1``) follows a Lorentzian in laser detuning whose
peak value is ``8F/pi`` and whose half width is ``kappa/4pi``. All
functions here use that near-resonance form; the exact Airy function is
not needed for detunings well inside one free spectral range.

The two orthogonal linear cavity modes (H and V) are treated as two
independent Lorentzians with the same linewidth and finesse. H is the mode
the readout transition is tuned to; V sits ``mode_splitting`` above it, so
a red-detuned Raman laser at detuning ``Delta`` from H is ``Delta +
mode_splitting`` away from V.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CavityError",
    "CavityParams",
    "Enhancement",
    "finesse_from_mirrors",
    "mirrors_from_finesse",
    "intensity_enhancement",
    "crossover_detuning",
    "polarization_compensation",
    "reference_cavity",
]


class CavityError(ValueError):
    """Invalid mirror parameters or a detuning outside the model range."""


def finesse_from_mirrors(r1: float, r2: float) -> float:
    """Finesse ``pi / (1 - r1*r2)`` from amplitude reflection coefficients."""
    for name, r in (("r1", r1), ("r2", r2)):
        if not 0.0 <= r <= 1.0:
            raise CavityError(f"mirror coefficient {name}={r} outside [0, 1]")
    product = r1 * r2
    if product >= 1.0:
        raise CavityError(f"r1*r2={product} >= 1: lossless cavity has undefined finesse")
    return math.pi / (1.0 - product)


def mirrors_from_finesse(finesse: float, r2: float = 1.0) -> tuple[float, float]:
    """Front-mirror coefficient reproducing ``finesse`` for a given back mirror."""
    if finesse <= math.pi:
        if finesse == math.pi:
            return 0.0, r2
        raise CavityError(f"finesse {finesse} below pi is not reachable with passive mirrors")
    r1 = (1.0 - math.pi / finesse) / r2
    if not 0.0 <= r1 <= 1.0:
        raise CavityError(f"no front mirror gives finesse {finesse} with r2={r2}")
    return r1, r2


@dataclass(frozen=True)
class CavityParams:
    """Cavity description.

    ``linewidth`` is ``kappa/2pi`` in Hz. ``mirror_r1``/``mirror_r2`` and
    ``free_spectral_range`` are optional cross-checks; when given they must
    agree with ``finesse`` (see :meth:`violations`).
    """

    finesse: float = 500.0
    linewidth: float = 25e9
    mode_splitting: float = 50e9
    mirror_r1: float | None = None
    mirror_r2: float | None = None
    resonance_frequency: float = 3.248e14
    free_spectral_range: float | None = None

    @property
    def fsr(self) -> float:
        """Free spectral range in Hz, ``finesse * kappa/2pi``."""
        if self.free_spectral_range is not None:
            return self.free_spectral_range
        return self.finesse * self.linewidth

    @property
    def peak_enhancement(self) -> float:
        return 8.0 * self.finesse / math.pi

    @property
    def half_width(self) -> float:
        """``kappa/4pi`` in Hz."""
        return 0.5 * self.linewidth

    def violations(self) -> list[tuple[str, str]]:
        """Invariant violations as ``(field, message)`` pairs; empty when valid."""
        out = []
        if not self.finesse > 0:
            out.append(("finesse", f"finesse must be positive, got {self.finesse}"))
        if not self.linewidth > 0:
            out.append(("linewidth", f"linewidth must be positive, got {self.linewidth}"))
        if self.mode_splitting < 0:
            out.append(("mode_splitting", "mode splitting must be non-negative"))
        if self.mirror_r1 is not None or self.mirror_r2 is not None:
            r1 = 1.0 if self.mirror_r1 is None else self.mirror_r1
            r2 = 1.0 if self.mirror_r2 is None else self.mirror_r2
            try:
                f_m = finesse_from_mirrors(r1, r2)
            except CavityError as exc:
                out.append(("mirrors", str(exc)))
            else:
                if self.finesse > 0 and abs(f_m - self.finesse) > 1e-3 * self.finesse:
                    out.append(("mirrors", f"mirrors give finesse {f_m:.6g}, configured {self.finesse:.6g}"))
        if self.free_spectral_range is not None and self.finesse > 0:
            expected = self.finesse * self.linewidth
            if abs(self.free_spectral_range - expected) > 1e-3 * expected:
                out.append(("free_spectral_range", f"finesse*linewidth={expected:.6g} Hz disagrees with FSR {self.free_spectral_range:.6g} Hz"))
        return out


def reference_cavity() -> CavityParams:
    """The device defaults: F=500, kappa/2pi=25 GHz, 50 GHz mode splitting."""
    r1, r2 = mirrors_from_finesse(500.0)
    return CavityParams(finesse=500.0, linewidth=25e9, mode_splitting=50e9, mirror_r1=r1, mirror_r2=r2)


@dataclass(frozen=True)
class Enhancement:
    value: float
    detuning: float


def intensity_enhancement(detuning, cavity: CavityParams):
    """Intensity ratio ``I_c/I_0`` at laser ``detuning`` (Hz) from the cavity resonance.

    Accepts scalars or arrays. Detunings beyond half a free spectral range
    are rejected: the single-Lorentzian form is meaningless there.
    """
    d = np.asarray(detuning, dtype=float)
    if np.any(np.abs(d) > 0.5 * cavity.fsr):
        raise CavityError(f"detuning beyond FSR/2 = {0.5 * cavity.fsr:.4g} Hz: outside the Lorentzian model")
    hw2 = cavity.half_width**2
    x = cavity.peak_enhancement * hw2 / (hw2 + d * d)
    return float(x) if x.ndim == 0 else x


def crossover_detuning(cavity: CavityParams) -> float:
    """Closed-form detuning where the enhancement falls to one (far-tail form)."""
    return cavity.linewidth * math.sqrt(2.0 * cavity.finesse / math.pi)


def polarization_compensation(detuning: float, cavity: CavityParams) -> np.ndarray:
    """Input Jones vector ``(E_H, E_V)`` that arrives circular at the dot.

    Each mode scales its field amplitude by the square root of its own
    enhancement, so the input amplitudes are weighted by the inverse; the
    V component carries the +90 degree phase of circular light. The vector
    is normalised to unit intensity.
    """
    e_h = intensity_enhancement(detuning, cavity)
    e_v = intensity_enhancement(detuning + cavity.mode_splitting, cavity)
    jones = np.array([1.0 / math.sqrt(e_h), 1j / math.sqrt(e_v)], dtype=complex)
    return jones / np.linalg.norm(jones)


def ellipticity(jones: np.ndarray) -> float:
    """``|a_H/a_V| - 1``: zero for circular light."""
    return abs(abs(jones[0]) / abs(jones[1]) - 1.0)
