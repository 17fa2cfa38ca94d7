"""Unit-suffixed scalar parsing.

All quantities inside the package are SI: frequencies and rates in Hz (1/s),
times in seconds, fields in tesla, power in mW, temperature in kelvin,
phases in radians. Strings such as ``"25GHz"``, ``"60 ns"`` or ``"pi/2"`` are
converted here, at the edges (config files, the sequence DSL, CLI flags).
"""

from __future__ import annotations

import math
import re

__all__ = ["UnitError", "parse_quantity", "parse_phase", "format_quantity", "DIMENSIONS"]


class UnitError(ValueError):
    """Raised for malformed or dimensionally wrong quantities."""


_SCALE = {"": 1.0, "k": 1e3, "M": 1e6, "G": 1e9, "T": 1e12, "m": 1e-3, "u": 1e-6, "µ": 1e-6, "μ": 1e-6, "n": 1e-9, "p": 1e-12}

# unit string -> (dimension, factor to SI)
_UNITS: dict[str, tuple[str, float]] = {}
for _p in ("", "k", "M", "G", "T"):
    _UNITS[_p + "Hz"] = ("frequency", _SCALE[_p])
for _p in ("", "m", "u", "µ", "μ", "n", "p"):
    _UNITS[_p + "s"] = ("time", _SCALE[_p])
    _UNITS["/" + _p + "s"] = ("rate", 1.0 / _SCALE[_p])
    _UNITS[_p + "s^-1"] = ("rate", 1.0 / _SCALE[_p])
_UNITS.update(
    {
        "T": ("field", 1.0),
        "mT": ("field", 1e-3),
        "W": ("power", 1e3),
        "mW": ("power", 1.0),
        "uW": ("power", 1e-3),
        "µW": ("power", 1e-3),
        "nW": ("power", 1e-6),
        "K": ("temperature", 1.0),
        "mK": ("temperature", 1e-3),
        "rad": ("angle", 1.0),
        "deg": ("angle", math.pi / 180.0),
        # laser-flip coefficient, kept in its customary ns^-1 per MHz
        "/ns/MHz": ("flip_coefficient", 1.0),
        "ns^-1/MHz": ("flip_coefficient", 1.0),
        "1": ("dimensionless", 1.0),
    }
)

DIMENSIONS = frozenset(d for d, _ in _UNITS.values())

_NUMBER = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?inf"
_QTY = re.compile(rf"^\s*({_NUMBER})\s*([^\s\d].*?)?\s*$")


def parse_quantity(text, dimension: str | None = None) -> float:
    """Convert ``"25GHz"``-style text to an SI float.

    Plain numbers pass through only when ``dimension`` is ``None`` or
    ``"dimensionless"``; dimensioned fields must carry a unit.
    """
    if isinstance(text, bool):
        raise UnitError(f"expected a quantity, got boolean {text!r}")
    if isinstance(text, (int, float)):
        if dimension not in (None, "dimensionless"):
            raise UnitError(f"missing unit on {dimension} value {text!r}")
        return float(text)
    s = str(text).strip()
    if dimension == "angle":
        return parse_phase(s)
    m = _QTY.match(s)
    if not m:
        raise UnitError(f"cannot parse quantity {text!r}")
    value = float(m.group(1))
    unit = (m.group(2) or "").replace(" ", "")
    if not unit:
        if dimension not in (None, "dimensionless"):
            raise UnitError(f"missing unit on {dimension} value {text!r}")
        return value
    if unit not in _UNITS:
        raise UnitError(f"unknown unit {unit!r} in {text!r}")
    dim, factor = _UNITS[unit]
    if dimension is not None and dim != dimension:
        raise UnitError(f"{text!r} is a {dim}, expected {dimension}")
    return value * factor


_PHASE = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi)?\s*(?:/\s*(\d+\.?\d*))?\s*(rad|deg)?\s*$")


def parse_phase(text) -> float:
    """Parse a phase such as ``0``, ``pi``, ``-pi/2``, ``3pi/2``, ``0.5 rad`` or ``90deg``."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    s = str(text).strip()
    neg = s.startswith("-") and s[1:2] == "p"
    if neg:
        s = s[1:]
    m = _PHASE.match(s)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise UnitError(f"cannot parse phase {text!r}")
    coef = float(m.group(1)) if m.group(1) is not None else 1.0
    value = coef * (math.pi if m.group(2) else 1.0)
    if m.group(3):
        value /= float(m.group(3))
    if m.group(4) == "deg":
        if m.group(2):
            raise UnitError(f"mixed pi and deg in {text!r}")
        value *= math.pi / 180.0
    return -value if neg else value


_PRETTY = {
    "frequency": [(1e12, "THz"), (1e9, "GHz"), (1e6, "MHz"), (1e3, "kHz"), (1.0, "Hz")],
    "time": [(1.0, "s"), (1e-3, "ms"), (1e-6, "us"), (1e-9, "ns"), (1e-12, "ps")],
}


def format_quantity(value: float, dimension: str) -> str:
    """Render an SI value with a readable prefix; round-trips through :func:`parse_quantity`."""
    if dimension not in _PRETTY or value == 0 or not math.isfinite(value):
        unit = {"frequency": "Hz", "time": "s", "field": "T", "power": "mW", "temperature": "K", "angle": "rad"}.get(dimension, "")
        return f"{value!r}{unit}"
    for scale, unit in _PRETTY[dimension]:
        if abs(value) >= scale:
            return f"{value / scale!r}{unit}"
    scale, unit = _PRETTY[dimension][-1]
    return f"{value / scale!r}{unit}"
