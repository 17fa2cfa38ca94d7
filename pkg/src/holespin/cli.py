"""Command-line front door: ``holespin run | validate | list-experiments``.

Exit codes: 0 success, 2 configuration or usage error, 3 parse or physics
error, 4 fit error (data files are still written). Every error exit ends
stderr with one line ``ERROR <code> <context>: <message>``.

Output of ``run`` in ``--out``: ``<experiment>.csv``, ``<experiment>.fit.txt``
and ``manifest.json`` (config hash, seed, shots, file digests, versions).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .analysis import FitError
from .config import ConfigError, load_config, validate_config
from .figures import FIGURES, run_panel
from .sequence.builtins import BUILTINS, analyze, builtin_experiments, list_experiments, ramsey_pulse_time
from .sequence.dsl import ParseError, parse_sequence, parse_value
from .sequence.engine import ExperimentError, run_experiment

__all__ = ["main"]

EXIT_CONFIG, EXIT_PHYSICS, EXIT_FIT = 2, 3, 4
SUITE = "figure-suite"


class CliError(Exception):
    def __init__(self, code: int, context: str, message: str):
        super().__init__(message)
        self.code = code
        self.context = context


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(EXIT_CONFIG, "usage", message)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="holespin", description="Quantum-dot hole-spin simulator.")
    p.add_argument("--version", action="version", version=f"holespin {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a builtin experiment, a figure panel, the figure suite or a sequence file")
    run.add_argument("sequence", nargs="?", help="sequence file (.seq); overrides --experiment")
    run.add_argument("--config", help="YAML config file (defaults are used when omitted)")
    run.add_argument("--experiment", help=f"builtin name, figure key (e.g. fig2a) or {SUITE!r}")
    run.add_argument("--seed", type=int, help="RNG seed; required here or as run.seed in the config")
    run.add_argument("--shots", type=int, help="Monte-Carlo shots per sweep point")
    run.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config or experiment override (repeatable)")
    run.add_argument("--no-rwa", action="store_true", help="lab-frame drive (no rotating-wave approximation)")

    val = sub.add_parser("validate", help="report config invariant violations without running physics")
    val.add_argument("--config")
    val.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    sub.add_parser("list-experiments", help="list builtin experiments and figure panels")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fit_text(name: str, fits, error) -> str:
    if error is not None:
        return f"# experiment: {name}\nstatus: failed\nerror: {_one_line(error)}\n"
    if not fits:
        return f"# experiment: {name}\nstatus: not-fitted\nnote: sequence files have no associated fit model\n"
    parts = [f"# experiment: {name}\nstatus: ok\n"]
    for f in fits:
        parts.append("\n" + f.report())
    return "".join(parts)


def _sequence_from_file(path: str, params: dict):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(EXIT_CONFIG, path, f"cannot read sequence file: {exc.strerror}") from exc
    try:
        seq = parse_sequence(text)
        for k, v in params.items():
            if k not in seq.params:
                raise ParseError(f"sequence has no parameter {k!r}")
            seq.params[k] = parse_value(str(v), "dimensionless", 0)
    except ParseError as exc:
        ctx = f"{path}:{exc.line}" if exc.line else path
        raise CliError(EXIT_PHYSICS, ctx, exc.bare_message) from exc
    return seq


def _pulse_time(name, seq, world):
    return ramsey_pulse_time(seq, world) if name in ("ramsey", "cooling_ramsey") else None


def _run_one(name: str, cfg, args, seed: int, shots: int, rwa: bool, out: Path, seq=None):
    meta = {"experiment": name, "config_hash": cfg.config_hash}
    try:
        if seq is not None:
            res = run_experiment(seq, cfg.world, shots=shots, seed=seed, threads=args.threads, rwa=rwa, metadata=meta)
            fits, ferr = [], None
        elif name in FIGURES:
            res, fits, ferr = run_panel(name, cfg.world, seed=seed, shots=shots, threads=args.threads, rwa=rwa, params=cfg.experiment_params)
            res.metadata = {**meta, **res.metadata, "experiment": name}
        else:
            try:
                seq = builtin_experiments(name, cfg.experiment_params)
            except KeyError as exc:
                raise CliError(EXIT_CONFIG, name, exc.args[0]) from exc
            res = run_experiment(seq, cfg.world, shots=shots, seed=seed, threads=args.threads, rwa=rwa, metadata=meta)
            try:
                fits, ferr = analyze(name, res, pulse_time=_pulse_time(name, seq, cfg.world)), None
            except FitError as exc:
                fits, ferr = [], exc
    except ParseError as exc:
        raise CliError(EXIT_PHYSICS, f"{name}:{exc.line}" if exc.line else name, exc.bare_message) from exc
    except KeyError as exc:
        raise CliError(EXIT_CONFIG, name, exc.args[0] if exc.args else str(exc)) from exc
    except (ExperimentError, ValueError, ArithmeticError) as exc:
        raise CliError(EXIT_PHYSICS, name, str(exc)) from exc

    csv_path = out / f"{name}.csv"
    fit_path = out / f"{name}.fit.txt"
    res.write_csv(csv_path)
    fit_path.write_text(_fit_text(name, fits, ferr), encoding="utf-8", newline="\n")
    return [csv_path, fit_path], ferr


def _versions() -> dict:
    import numpy
    import scipy
    import yaml

    return {"holespin": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__}


def cmd_run(args) -> int:
    experiment = None if args.sequence else args.experiment
    try:
        cfg = load_config(args.config, args.set, experiment=experiment)
    except ConfigError as exc:
        msg = str(exc)
        if exc.path and msg.startswith(exc.path + ": "):
            msg = msg[len(exc.path) + 2:]
        raise CliError(EXIT_CONFIG, exc.path or "config", msg) from exc
    run = cfg.run
    seed = args.seed if args.seed is not None else run.get("seed")
    if seed is None:
        raise CliError(EXIT_CONFIG, "run.seed", "a seed is required (--seed or run.seed); there is no implicit default")
    shots = args.shots if args.shots is not None else run["shots"]
    if shots < 2:
        raise CliError(EXIT_CONFIG, "run.shots", "shots must be >= 2")
    if args.threads < 1:
        raise CliError(EXIT_CONFIG, "threads", "threads must be >= 1")
    rwa = cfg.values["simulation"]["rwa"] and not args.no_rwa

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, str(out), f"cannot create output directory: {exc.strerror}") from exc

    if args.sequence:
        seq = _sequence_from_file(args.sequence, cfg.experiment_params)
        jobs = [(Path(args.sequence).stem, seq)]
    else:
        name = run["experiment"]
        if name == SUITE:
            if cfg.experiment_params:
                raise CliError(EXIT_CONFIG, SUITE, "experiment parameters cannot be applied to the whole figure suite")
            jobs = [(k, None) for k in FIGURES]
        elif name in FIGURES or name in BUILTINS:
            jobs = [(name, None)]
        else:
            known = ", ".join([*BUILTINS, *FIGURES, SUITE])
            raise CliError(EXIT_CONFIG, "run.experiment", f"unknown experiment {name!r}; known: {known}")

    files: list[Path] = []
    fit_failures = []
    for name, seq in jobs:
        written, ferr = _run_one(name, cfg, args, int(seed), int(shots), rwa, out, seq)
        files += written
        if ferr is not None:
            fit_failures.append((name, ferr))

    manifest = {
        "experiment": jobs[0][0] if len(jobs) == 1 else SUITE,
        "config_hash": cfg.config_hash,
        "seed": int(seed),
        "shots": int(shots),
        "rwa": bool(rwa),
        "overrides": list(args.set),
        "files": {p.name: _sha256(p) for p in files},
        "fit_failures": [n for n, _ in fit_failures],
        "versions": _versions(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8", newline="\n")
    for p in files:
        print(p)
    if fit_failures:
        name, err = fit_failures[0]
        raise CliError(EXIT_FIT, name, str(err))
    return 0


def cmd_validate(args) -> int:
    bad = validate_config(args.config, args.set)
    if not bad:
        print("OK: 0 violations")
    else:
        for path, msg in bad:
            print(f"VIOLATION {path or '<config>'}: {_one_line(msg)}")
        print(f"{len(bad)} violation(s)")
    return 0


def cmd_list(args) -> int:
    for name, desc in list_experiments():
        print(f"{name:16s} {desc}")
    for key, panel in FIGURES.items():
        print(f"{key:16s} figure panel: {panel.description}")
    print(f"{SUITE:16s} every figure panel above")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"run": cmd_run, "validate": cmd_validate, "list-experiments": cmd_list}[args.command]
        return handler(args)
    except CliError as exc:
        print(f"ERROR {exc.code} {exc.context}: {_one_line(exc)}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
