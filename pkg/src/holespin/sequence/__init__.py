"""Pulse sequences: text format, Monte-Carlo runner and built-in protocols."""

from .dsl import ParseError, PulseSequence, parse_sequence
from .engine import ExperimentError, World, run_experiment
from .results import Axis, ExperimentResult

__all__ = [
    "ParseError",
    "PulseSequence",
    "parse_sequence",
    "ExperimentError",
    "World",
    "run_experiment",
    "Axis",
    "ExperimentResult",
]
