"""Line-oriented pulse-sequence language.

One element or directive per line; ``;`` or a slash surrounded by spaces
separates several on one line and ``#`` starts a comment::

    init 30ns
    raman angle=pi/2
    wait t=0ns
    raman angle=pi/2 phase=0
    readout 90ns
    sweep wait.t from 0 to 200ns steps 101
    interleave phase 0 pi

Elements: ``init [t]``, ``raman key=value...``, ``wait [t]``,
``readout [t] [mode=trace]``, ``hh omega= t=``, ``barrier`` and
``cool key=value...``. Directives: ``sweep <target> from <a> to <b> steps
<n>``, ``interleave [<elem>.]phase <a> <b>``, ``let <name> = <value>``,
``shots <n>`` and ``seed <n>``.

Field values are unit-suffixed literals (``5.26ns``, ``95MHz``, ``pi/2``)
or arithmetic expressions over ``$name`` parameters, literals and ``pi``
(``$T/2``, ``$Tmax-$T``). Sweeps target ``<elem>.<field>`` (``elem`` is a
``name=`` label, an element kind if unique, or ``kind<k>`` for the k-th of
that kind, 1-based) or a bare parameter name used by ``$name``.
"""

from __future__ import annotations

import ast
import math
import operator
import re
from dataclasses import dataclass, field

import numpy as np

from ..units import UnitError, parse_phase, parse_quantity

__all__ = ["ParseError", "Expr", "Element", "Sweep", "Interleave", "PulseSequence", "parse_sequence", "evaluate", "FIELDS"]


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.bare_message = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


# kind -> field -> dimension; "positional" names the field a bare value fills
FIELDS: dict[str, dict[str, str]] = {
    "init": {"t": "time"},
    "raman": {
        "omega": "frequency",
        "power": "power",
        "Delta": "frequency",
        "delta": "frequency",
        "phase": "angle",
        "mwphase": "angle",
        "t": "time",
        "angle": "angle",
    },
    "wait": {"t": "time"},
    "readout": {"t": "time", "bins": "dimensionless"},
    "hh": {"omega": "frequency", "t": "time", "delta": "frequency"},
    "barrier": {},
    "cool": {
        "n_cycles": "dimensionless",
        "tau_min": "time",
        "tau_max": "time",
        "tc": "time",
        "omega_c": "frequency",
        "readout": "time",
        "efficiency": "dimensionless",
        "flip": "frequency",
        "repetitions": "dimensionless",
    },
}
POSITIONAL = {"init": "t", "wait": "t", "readout": "t"}
STRING_FIELDS = {"name", "mode"}
DURATION_FIELDS = {"t", "tau_min", "tau_max", "tc", "readout"}


@dataclass(frozen=True)
class Expr:
    """Deferred arithmetic over ``$params``; ``text`` has literals already in SI."""

    text: str
    source: str

    def params(self) -> set[str]:
        return set(re.findall(r"\$([A-Za-z_]\w*)", self.text))


Value = float | Expr


@dataclass
class Element:
    kind: str
    fields: dict[str, Value]
    line: int
    name: str | None = None
    mode: str | None = None

    def label(self) -> str:
        return self.name or self.kind


@dataclass
class Sweep:
    element: int | None  # index into PulseSequence.elements, None for a bare parameter
    field: str
    values: np.ndarray
    label: str
    line: int
    dimension: str = "dimensionless"


@dataclass
class Interleave:
    element: int
    field: str
    values: tuple[float, float]
    line: int


@dataclass
class PulseSequence:
    elements: list[Element]
    sweeps: list[Sweep] = field(default_factory=list)
    interleave: Interleave | None = None
    shots: int | None = None
    seed: int | None = None
    params: dict[str, Value] = field(default_factory=dict)
    source: str = ""

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(s.values) for s in self.sweeps)

    @property
    def n_points(self) -> int:
        return int(np.prod(self.shape)) if self.sweeps else 1

    def find(self, kind: str) -> list[int]:
        return [i for i, e in enumerate(self.elements) if e.kind == kind]


_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
    ast.USub: operator.neg,
    ast.UAdd: operator.pos,
}


def _eval_node(node, env):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, env)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.left, env), _eval_node(node.right, env))
    if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval_node(node.operand, env))
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return math.pi
        if node.id.startswith("P_") and node.id[2:] in env:
            return float(env[node.id[2:]])
        raise KeyError(node.id[2:] if node.id.startswith("P_") else node.id)
    raise ValueError("unsupported expression")


def evaluate(value: Value, env: dict[str, float]) -> float:
    """Resolve a field value against parameter values (SI floats)."""
    if isinstance(value, Expr):
        tree = ast.parse(value.text.replace("$", "P_"), mode="eval")
        return float(_eval_node(tree, env))
    return float(value)


_LITERAL = re.compile(r"(?<![\w$.])((?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([a-zA-Zµμ/^\-]*[a-zA-Z])?(?![\w])")
_ANGLE_UNITS = {"rad": 1.0, "deg": math.pi / 180.0}


def _expr_from(text: str, dimension: str, line: int) -> Expr:
    """Replace unit-suffixed literals by SI numbers and syntax-check."""

    def repl(m):
        num, unit = m.group(1), m.group(2)
        if not unit or unit == "pi":
            return num if not unit else f"{num}*pi"
        if unit in _ANGLE_UNITS:
            return repr(float(num) * _ANGLE_UNITS[unit])
        try:
            return repr(parse_quantity(num + unit))
        except UnitError as exc:
            raise ParseError(str(exc), line) from exc

    converted = _LITERAL.sub(repl, text)
    try:
        tree = ast.parse(converted.replace("$", "P_"), mode="eval")
        _check_tree(tree)
    except (SyntaxError, ValueError) as exc:
        raise ParseError(f"bad expression {text!r}", line) from exc
    return Expr(converted, text)


def _check_tree(node):
    allowed = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Constant, ast.Name, ast.Load) + tuple(_OPS)
    for sub in ast.walk(node):
        if not isinstance(sub, allowed):
            raise ValueError("unsupported syntax")


def parse_value(text: str, dimension: str, line: int) -> Value:
    text = text.strip()
    if re.fullmatch(r"[-+]?0*\.?0+", text):
        return 0.0  # zero needs no unit
    if "$" in text:
        return _expr_from(text, dimension, line)
    try:
        if dimension == "angle":
            return parse_phase(text)
        return parse_quantity(text, None if dimension == "dimensionless" else dimension)
    except UnitError:
        pass
    # arithmetic over literals, e.g. 2*pi*10MHz
    if re.search(r"[-+*/()]", text[1:] if text[:1] in "+-" else text) or "pi" in text:
        expr = _expr_from(text, dimension, line)
        try:
            return evaluate(expr, {})
        except (KeyError, ValueError, ZeroDivisionError) as exc:
            raise ParseError(f"cannot evaluate {text!r}", line) from exc
    try:
        return parse_quantity(text, None if dimension == "dimensionless" else dimension)
    except UnitError as exc:
        raise ParseError(str(exc), line) from exc


def _split_statements(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        for stmt in re.split(r";|\s/\s", body):
            stmt = stmt.strip()
            if stmt:
                yield lineno, stmt


def _parse_element(kind: str, tokens: list[str], line: int) -> Element:
    spec = FIELDS[kind]
    fields: dict[str, Value] = {}
    name = mode = None
    for tok in tokens:
        if "=" in tok:
            key, _, val = tok.partition("=")
            if key == "name":
                name = val
                continue
            if key == "mode":
                if kind != "readout" or val not in ("integrated", "trace"):
                    raise ParseError(f"invalid mode {val!r} for {kind}", line)
                mode = val
                continue
            if key not in spec:
                raise ParseError(f"unknown field {key!r} for {kind}", line)
        else:
            key, val = POSITIONAL.get(kind), tok
            if key is None:
                raise ParseError(f"unexpected token {tok!r} for {kind}", line)
        if key in fields:
            raise ParseError(f"duplicate field {key!r}", line)
        fields[key] = parse_value(val, spec[key], line)
        if key in DURATION_FIELDS and not isinstance(fields[key], Expr) and fields[key] < 0:
            raise ParseError(f"negative duration {key}={val}", line)
    if kind == "raman":
        if "phase" in fields and "mwphase" in fields:
            raise ParseError("give either phase or mwphase, not both", line)
        if "t" in fields and "angle" in fields:
            raise ParseError("give either t or angle, not both", line)
        if "omega" in fields and ("power" in fields or "Delta" in fields):
            raise ParseError("give either omega or power/Delta, not both", line)
    if kind == "hh" and not {"omega", "t"} <= set(fields):
        raise ParseError("hh needs omega= and t=", line)
    return Element(kind, fields, line, name, mode)


def _resolve_target(seq: PulseSequence, target: str, line: int) -> tuple[int, str]:
    elem, _, fld = target.rpartition(".")
    matches = [i for i, e in enumerate(seq.elements) if e.name == elem]
    if not matches:
        m = re.fullmatch(r"([a-z]+)(\d+)", elem)
        if m and m.group(1) in FIELDS:
            idx = seq.find(m.group(1))
            k = int(m.group(2))
            if not 1 <= k <= len(idx):
                raise ParseError(f"no element {elem!r}", line)
            matches = [idx[k - 1]]
        else:
            matches = seq.find(elem)
            if len(matches) > 1:
                raise ParseError(f"{elem!r} is ambiguous ({len(matches)} elements); use {elem}1, {elem}2, ... or name=", line)
    if not matches:
        raise ParseError(f"sweep over missing element {elem!r}", line)
    i = matches[0]
    kind = seq.elements[i].kind
    if fld not in FIELDS[kind]:
        raise ParseError(f"sweep over missing field {kind}.{fld}", line)
    return i, fld


def parse_sequence(text: str) -> PulseSequence:
    """Parse DSL text into a :class:`PulseSequence`; errors cite line numbers."""
    seq = PulseSequence(elements=[], source=text)
    pending: list[tuple[int, list[str]]] = []
    for line, stmt in _split_statements(text):
        tokens = stmt.split()
        head = tokens[0]
        if head in FIELDS:
            seq.elements.append(_parse_element(head, tokens[1:], line))
        elif head in ("sweep", "interleave"):
            pending.append((line, tokens))
        elif head in ("shots", "seed"):
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise ParseError(f"{head} expects one non-negative integer", line)
            value = int(tokens[1])
            if head == "shots" and value < 1:
                raise ParseError("shots must be >= 1", line)
            setattr(seq, head, value)
        elif head == "let":
            m = re.fullmatch(r"let\s+([A-Za-z_]\w*)\s*=\s*(\S+)", stmt)
            if not m:
                raise ParseError("expected 'let <name> = <value>'", line)
            seq.params[m.group(1)] = parse_value(m.group(2), "dimensionless", line)
        else:
            raise ParseError(f"unknown keyword {head!r}", line)

    for line, tokens in pending:
        if tokens[0] == "sweep":
            m = re.fullmatch(r"sweep\s+(\S+)\s+from\s+(\S+)\s+to\s+(\S+)\s+steps\s+(\d+)", " ".join(tokens))
            if not m:
                raise ParseError("expected 'sweep <target> from <a> to <b> steps <n>'", line)
            target, a, b, n = m.group(1), m.group(2), m.group(3), int(m.group(4))
            if n < 1:
                raise ParseError("steps must be >= 1", line)
            if "." in target:
                idx, fld = _resolve_target(seq, target, line)
                dim = FIELDS[seq.elements[idx].kind][fld]
                label = f"{seq.elements[idx].label()}.{fld}" if seq.elements[idx].name else target
            else:
                idx, fld, dim, label = None, target, "dimensionless", target
            va, vb = parse_value(a, dim, line), parse_value(b, dim, line)
            if isinstance(va, Expr) or isinstance(vb, Expr):
                raise ParseError("sweep bounds must be literals", line)
            values = np.linspace(va, vb, n)
            if fld in DURATION_FIELDS and np.any(values < 0):
                raise ParseError(f"negative duration in sweep of {target}", line)
            if any(s.label == label for s in seq.sweeps):
                raise ParseError(f"{label} swept twice", line)
            seq.sweeps.append(Sweep(idx, fld, values, label, line, dim))
        else:
            if len(tokens) != 4:
                raise ParseError("expected 'interleave [<elem>.]phase <a> <b>'", line)
            target = tokens[1]
            if "." not in target:
                ramans = seq.find("raman")
                if not ramans:
                    raise ParseError("interleave needs a raman element", line)
                target = f"raman{len(ramans)}.{target}"
            idx, fld = _resolve_target(seq, target, line)
            if fld not in ("phase", "mwphase"):
                raise ParseError("only phase or mwphase can be interleaved", line)
            seq.interleave = Interleave(idx, fld, (parse_phase(tokens[2]), parse_phase(tokens[3])), line)

    for s in seq.sweeps:
        if s.element is None and not any(s.field in _expr_params(e) for e in seq.elements) and s.field not in _param_refs(seq.params):
            raise ParseError(f"sweep over missing field {s.field!r}: no element uses ${s.field}", s.line)
    _validate_structure(seq)
    return seq


def _expr_params(e: Element) -> set[str]:
    out: set[str] = set()
    for v in e.fields.values():
        if isinstance(v, Expr):
            out |= v.params()
    return out


def _param_refs(params: dict[str, Value]) -> set[str]:
    out: set[str] = set()
    for v in params.values():
        if isinstance(v, Expr):
            out |= v.params()
    return out


def _validate_structure(seq: PulseSequence) -> None:
    if not seq.find("readout"):
        raise ParseError("no readout element")
    ramans = seq.find("raman")
    if ramans:
        inits = [i for i in seq.find("init") if i < ramans[0]]
        if len(inits) != 1:
            line = seq.elements[ramans[0]].line
            raise ParseError(f"expected exactly one init before the first raman element, found {len(inits)}", line)
    known = set(seq.params) | {s.field for s in seq.sweeps if s.element is None}
    for e in seq.elements:
        missing = _expr_params(e) - known
        if missing:
            raise ParseError(f"undefined parameter(s) {', '.join('$' + m for m in sorted(missing))}", e.line)
    missing = _param_refs(seq.params) - known
    if missing:
        raise ParseError(f"undefined parameter(s) {', '.join('$' + m for m in sorted(missing))}")
