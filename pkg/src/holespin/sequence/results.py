"""Experiment result table and its CSV form.

CSV layout: metadata lines ``# key: value`` (insertion order), then a header
``<axis_1>,...,<axis_k>,mean,stderr`` and one row per sweep point in
row-major order (first declared sweep outermost). Floats use ``repr`` so
files are byte-stable across runs and platforms. Axis units are recorded
in the ``axis_units`` metadata line.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

__all__ = ["Axis", "ExperimentResult"]


@dataclass
class Axis:
    name: str
    values: np.ndarray
    unit: str = ""


@dataclass
class ExperimentResult:
    axes: list[Axis]
    mean: np.ndarray
    stderr: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)
    extra: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        expected = int(np.prod([len(a.values) for a in self.axes])) if self.axes else 1
        self.mean = np.asarray(self.mean, dtype=float).reshape(-1)
        self.stderr = np.asarray(self.stderr, dtype=float).reshape(-1)
        if self.mean.size != expected or self.stderr.size != expected:
            raise ValueError(f"point count {self.mean.size} does not match sweep shape ({expected})")

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(a.values) for a in self.axes)

    def grid(self) -> np.ndarray:
        """Mean signal reshaped to the sweep shape."""
        return self.mean.reshape(self.shape) if self.axes else self.mean

    def axis(self, name: str) -> np.ndarray:
        for a in self.axes:
            if a.name == name:
                return a.values
        raise KeyError(name)

    def to_csv_text(self) -> str:
        out = io.StringIO()
        meta = dict(self.metadata)
        meta["axis_units"] = json.dumps({a.name: a.unit for a in self.axes}, sort_keys=False)
        meta["shape"] = json.dumps(list(self.shape))
        for k, v in meta.items():
            out.write(f"# {k}: {v}\n")
        out.write(",".join([a.name for a in self.axes] + ["mean", "stderr"]) + "\n")
        coords = product(*[a.values.tolist() for a in self.axes]) if self.axes else [()]
        for c, m, s in zip(coords, self.mean.tolist(), self.stderr.tolist()):
            out.write(",".join(repr(float(v)) for v in (*c, m, s)) + "\n")
        return out.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text(), encoding="utf-8", newline="\n")

    @classmethod
    def from_csv_text(cls, text: str) -> "ExperimentResult":
        meta: dict[str, str] = {}
        rows: list[list[float]] = []
        header: list[str] | None = None
        for line in text.splitlines():
            if line.startswith("# "):
                key, _, val = line[2:].partition(": ")
                meta[key] = val
            elif header is None:
                header = line.split(",")
            elif line.strip():
                rows.append([float(v) for v in line.split(",")])
        if header is None or header[-2:] != ["mean", "stderr"]:
            raise ValueError("not an experiment CSV: missing 'mean,stderr' header")
        data = np.array(rows, dtype=float).reshape(len(rows), len(header))
        names = header[:-2]
        units = json.loads(meta.pop("axis_units", "{}"))
        shape = json.loads(meta.pop("shape", "null"))
        axes = []
        for k, name in enumerate(names):
            col = data[:, k]
            if shape is not None:
                stride = int(np.prod(shape[k + 1:]))
                values = col[: shape[k] * stride : stride]
            else:
                _, first = np.unique(col, return_index=True)
                values = col[np.sort(first)]
            axes.append(Axis(name, values, units.get(name, "")))
        return cls(axes, data[:, -2], data[:, -1], meta)

    @classmethod
    def read_csv(cls, path) -> "ExperimentResult":
        return cls.from_csv_text(Path(path).read_text(encoding="utf-8"))
