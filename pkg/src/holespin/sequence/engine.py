"""Monte-Carlo experiment runner.

Every sweep point gets its own random stream ``default_rng([seed, point])``
and evaluates all shots vectorized, so results do not depend on thread
count or completion order. Within a point each shot samples a quasistatic
Overhauser detuning (and, if a noise spectrum is configured, a time-domain
noise trajectory), then the Bloch vector is pushed through the elements:

* ``init``/``readout``: optical pumping. The readout signal is linear in the
  bright-state population, ``S = P_up * A_up + (1 - P_up) * A_down``, with
  ``A`` the integrated emission of the four-level pumping model.
* ``raman``/``hh``: rotating-frame drive with laser-induced flips, T1 and
  the flip-flop channel (exact 4x4 affine propagators), or the lab-frame
  integrator when ``rwa=False``.
* ``wait``: free precession at the two-photon detuning of the last drive
  plus bath and noise, with T1.

Element detunings ``delta`` add to the drive's static two-photon detuning
``2 f_mw - Z_h`` and pulse phases to its qubit phase ``2 phi_mw``.
* ``cool``: replaces the shot's Overhauser value by a draw from the cooled
  distribution produced by the feedback protocol.
"""

from __future__ import annotations

import hashlib
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np
import scipy.linalg

from .. import __version__
from ..bath import CoolingProtocol, NuclearBath, hartmann_hahn_rate, run_cooling, sample_overhauser
from ..cavity import CavityParams, reference_cavity
from ..dynamics import (
    DOWN,
    TRION_UP,
    UP,
    RamanDrive,
    ReadoutModel,
    SpinSystem,
    bloch_generator,
    calibrate_coupling,
    lab_frame_propagator,
    laser_flip_rate,
    liouvillian,
    pump_rabi_for_init_time,
    pumping_hamiltonian,
    qubit_dissipators_4level,
    rotate_bloch,
    spin_rabi_frequency,
    unitary_to_rotation,
)
from ..noise import NoiseSpectrum, generate_noise_trajectory
from ..noise import _cumulative_linear
from .dsl import PulseSequence, evaluate
from .results import Axis, ExperimentResult

__all__ = ["World", "ExperimentError", "run_experiment", "sequence_duration", "element_duration"]

logger = logging.getLogger(__name__)

DEFAULT_INIT = 30e-9
DEFAULT_READOUT = 90e-9
TWO_PI = 2.0 * math.pi
_UNIT_OF = {"time": "s", "frequency": "Hz", "angle": "rad", "power": "mW", "dimensionless": ""}


class ExperimentError(RuntimeError):
    """Physics failure at a specific sweep point."""


@dataclass(frozen=True)
class World:
    """All physical parameters an experiment needs."""

    cavity: CavityParams = field(default_factory=reference_cavity)
    system: SpinSystem = field(default_factory=SpinSystem)
    drive: RamanDrive = field(default_factory=lambda: RamanDrive(coupling=calibrate_coupling(95e6, 320e9, 1.0, reference_cavity())))
    bath: NuclearBath = field(default_factory=NuclearBath)
    noise: NoiseSpectrum | None = None
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    protocol: CoolingProtocol = field(default_factory=CoolingProtocol)
    rabi: float | None = None  # overrides the drive-derived spin Rabi frequency
    include_flips: bool = True
    include_t1: bool = True
    include_bath: bool = True
    cooling_pool: int = 20000
    detuning_grid: float = 10e3  # Hz; dissipative pulses snap shot detunings to this grid (0 = exact)

    @property
    def default_rabi(self) -> float:
        return self.rabi if self.rabi is not None else spin_rabi_frequency(self.drive, self.cavity)


@dataclass
class _Concrete:
    kind: str
    f: dict[str, float]
    mode: str | None
    line: int


class _Context:
    """Per-run caches shared by worker threads."""

    def __init__(self, world: World, seed: int):
        self.world = world
        self.seed = seed
        self._lock = threading.Lock()
        self._pump: dict = {}
        self._pools: dict = {}
        self._pump_rabi = world.readout.pump_rabi if world.readout.pump_rabi is not None else pump_rabi_for_init_time(world.system, world.readout.init_time)

    def pumping(self, duration: float, bins: int = 0):
        """Emission integrals and final bright population for both starting states."""
        key = (round(duration, 18), bins)
        with self._lock:
            if key in self._pump:
                return self._pump[key]
        w = self.world
        n = int(min(max(duration / 5e-12, 200), 40000))
        dt = duration / n
        lv = liouvillian(pumping_hamiltonian(w.system, self._pump_rabi, w.readout.diagonal_strength), qubit_dissipators_4level(w.system))
        step = scipy.linalg.expm(lv * dt)
        out = {}
        for label, level in (("up", UP), ("down", DOWN)):
            rho = np.zeros((4, 4), dtype=complex)
            rho[level, level] = 1.0
            v = rho.ravel()
            em = np.empty(n + 1)
            for k in range(n + 1):
                em[k] = w.system.gamma_x * v[TRION_UP * 4 + TRION_UP].real
                if k < n:
                    v = step @ v
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (em[1:] + em[:-1]) * dt)]) * w.readout.detection_scale
            final = v.reshape(4, 4)
            p_up = final[UP, UP].real / max(final[UP, UP].real + final[DOWN, DOWN].real, 1e-300)
            binned = None
            if bins:
                edges = np.linspace(0, n, bins + 1).round().astype(int)
                binned = np.diff(cum[edges])
            out[label] = (cum[-1], p_up, binned)
        with self._lock:
            self._pump[key] = out
        return out

    def cooled_pool(self, protocol: CoolingProtocol) -> np.ndarray:
        with self._lock:
            if protocol in self._pools:
                return self._pools[protocol]
        digest = int.from_bytes(hashlib.sha256(repr(protocol).encode()).digest()[:4], "little")
        rng = np.random.default_rng([self.seed, 0x0C001, digest])
        state = self.world.bath.overhauser
        traj = run_cooling(protocol, replace(state, samples=None) if state.samples is None else state, rng, n_runs=self.world.cooling_pool)
        pool = traj.final.samples
        with self._lock:
            self._pools[protocol] = pool
        return pool


def _raman_params(el: _Concrete, world: World) -> tuple[float, float, float, float]:
    f = el.f
    if "omega" in f:
        rabi = f["omega"]
    elif "power" in f or "Delta" in f:
        drive = replace(world.drive, power=f.get("power", world.drive.power), detuning=f.get("Delta", world.drive.detuning))
        rabi = spin_rabi_frequency(drive, world.cavity)
    else:
        rabi = world.default_rabi
    if rabi < 0:
        raise ValueError("negative Rabi frequency")
    phase = f["phase"] if "phase" in f else 2.0 * f.get("mwphase", 0.0)
    if "t" in f:
        t = f["t"]
    elif "angle" in f:
        if rabi == 0:
            raise ValueError("angle= needs a non-zero Rabi frequency")
        t = f["angle"] / (TWO_PI * rabi)
    else:
        raise ValueError(f"line {el.line}: raman needs t= or angle=")
    if t < 0:
        raise ValueError(f"line {el.line}: negative duration")
    return rabi, f.get("delta", 0.0), phase + world.drive.qubit_phase, t


def _element_duration(el: _Concrete, world: World) -> float:
    if el.kind == "raman":
        return _raman_params(el, world)[3]
    if el.kind == "init":
        return el.f.get("t", DEFAULT_INIT)
    if el.kind == "readout":
        return el.f.get("t", DEFAULT_READOUT)
    if el.kind in ("wait", "hh"):
        return el.f.get("t", 0.0)
    return 0.0


def _protocol_for(el: _Concrete, world: World) -> CoolingProtocol:
    p = world.protocol
    mapping = {
        "n_cycles": ("n_cycles", int),
        "tau_min": ("tau_min", float),
        "tau_max": ("tau_max", float),
        "tc": ("tc", float),
        "omega_c": ("omega_c", float),
        "readout": ("readout_len", float),
        "efficiency": ("flip_efficiency", float),
        "flip": ("flip_size", float),
        "repetitions": ("repetitions", int),
    }
    changes = {attr: cast(el.f[k]) for k, (attr, cast) in mapping.items() if k in el.f}
    return replace(p, **changes) if changes else p


class _PointRunner:
    def __init__(self, ctx: _Context, elements: list[_Concrete], shots: int, rwa: bool, record_z: bool):
        self.ctx = ctx
        self.world = ctx.world
        self.elements = elements
        self.shots = shots
        self.rwa = rwa
        self.record_z = record_z
        self.trace_bins = 0
        self._prop_cache: dict = {}
        for el in elements:
            if el.kind == "readout" and el.mode == "trace":
                self.trace_bins = int(el.f.get("bins", 200))

    def run(self, rng: np.random.Generator, shared: dict | None = None):
        """Per-shot signals (``(shots,)`` or ``(shots, bins)``), time-averaged z and z entering readout."""
        w = self.world
        n = self.shots
        offsets = np.asarray(sample_overhauser(w.bath.overhauser, rng, size=n), dtype=float) if w.include_bath else np.zeros(n)
        # static two-photon detuning of the drive, 2 f_mw - Z_h (+ Stark offset)
        base = w.drive.two_photon_detuning(w.system)
        offsets = offsets + base
        # interleave variants share timing, hence the noise draw; reuse it and
        # leave the generator where the first variant left it
        if shared is not None and "noise" in shared:
            noise_phase, state = shared["noise"]
            rng.bit_generator.state = state
        else:
            noise_phase = self._noise_phases(rng)
            if shared is not None:
                shared["noise"] = (noise_phase, rng.bit_generator.state)
        r = np.zeros((n, 3))
        r[:, 2] = 1.0 - 2.0 * w.readout.rho11_initial
        g_down, g_up = w.system.relaxation_rates() if w.include_t1 else (0.0, 0.0)
        last_delta = 0.0
        signal = None
        z_int = np.zeros(n)
        z_time = 0.0
        z_final = None
        wait_k = 0
        for el in self.elements:
            if el.kind == "init":
                r = self._pump(r, el.f.get("t", DEFAULT_INIT))[0]
            elif el.kind == "readout":
                if z_final is None:
                    z_final = r[:, 2].copy()
                r, signal = self._pump(r, el.f.get("t", DEFAULT_READOUT), readout=True, rng=rng)
            elif el.kind in ("raman", "hh"):
                if el.kind == "raman":
                    rabi, delta, phase, t = _raman_params(el, w)
                else:
                    rabi, delta, phase, t = el.f["omega"], el.f.get("delta", 0.0), 0.0, el.f["t"]
                last_delta = delta
                r, zi = self._drive(r, rabi, delta + offsets, phase, t, g_down, g_up)
                z_int += zi
                z_time += t
            elif el.kind == "wait":
                t = el.f.get("t", 0.0)
                extra = noise_phase[:, wait_k] if noise_phase is not None else 0.0
                wait_k += 1
                r, zi = self._wait(r, (last_delta + offsets) * TWO_PI * t + extra, t, g_down, g_up)
                z_int += zi
                z_time += t
            elif el.kind == "cool":
                pool = self.ctx.cooled_pool(_protocol_for(el, w))
                offsets = rng.choice(pool, size=n) + base
            elif el.kind == "barrier":
                pass
        mean_z = z_int / z_time if z_time > 0 else np.zeros(n)
        return signal, mean_z, (z_final if z_final is not None else r[:, 2].copy())

    # -- elements ---------------------------------------------------------------------------

    def _pump(self, r, duration, readout=False, rng=None):
        p_up = 0.5 * (1.0 - r[:, 2])
        bins = self.trace_bins if readout else 0
        tab = self.ctx.pumping(duration, bins)
        a_up, u_up, b_up = tab["up"]
        a_dn, u_dn, b_dn = tab["down"]
        new_up = p_up * u_up + (1.0 - p_up) * u_dn
        out = np.zeros_like(r)
        out[:, 2] = 1.0 - 2.0 * new_up
        if not readout:
            return out, None
        if bins:
            sig = p_up[:, None] * b_up[None, :] + (1.0 - p_up)[:, None] * b_dn[None, :]
        else:
            sig = p_up * a_up + (1.0 - p_up) * a_dn
        if self.world.readout.shot_noise:
            sig = rng.poisson(sig).astype(float)
        return out, sig

    def _drive(self, r, rabi, delta, phase, t, g_down, g_up):
        w = self.world
        if t == 0:
            return r, np.zeros(len(r))
        flip = laser_flip_rate(rabi, w.system) if w.include_flips else 0.0
        nsub = 8 if self.record_z else 1
        if not self.rwa:
            return self._drive_lab(r, rabi, delta, phase, t, nsub)
        dissipative = flip > 0 or g_down > 0 or g_up > 0 or (w.include_bath and w.bath.hh_enabled and w.bath.hh_strength > 0)
        if not dissipative:
            zi = np.zeros(len(r))
            cur = r
            for k in range(nsub):
                nxt = rotate_bloch(cur, rabi, delta, phase, t / nsub)
                zi += 0.5 * (cur[:, 2] + nxt[:, 2]) * t / nsub
                cur = nxt
            return cur, zi
        # shots sharing a detuning share a propagator
        grid = w.detuning_grid
        keyed = np.round(delta / grid) if grid > 0 else delta
        uniq, inv = np.unique(keyed, return_inverse=True)
        cache_key = (rabi, phase, t, nsub, flip, g_down, g_up)
        cached = self._prop_cache.get(cache_key)
        if cached is not None and cached[0].shape == uniq.shape and np.array_equal(cached[0], uniq):
            props = cached[1]
        else:
            det = uniq * grid if grid > 0 else uniq
            hh_u = hartmann_hahn_rate(rabi, det, w.bath) if w.include_bath else np.zeros(len(uniq))
            gens = bloch_generator(np.full(len(uniq), rabi), det, phase, flip_rate=flip, gamma_down=g_down, gamma_up=g_up, depolarizing=hh_u)
            props = scipy.linalg.expm(gens * (t / nsub))
            self._prop_cache[cache_key] = (uniq, props)
        props = props[inv]
        zi = np.zeros(len(r))
        cur = r
        for k in range(nsub):
            nxt = np.einsum("nij,nj->ni", props[:, :3, :3], cur) + props[:, :3, 3]
            zi += 0.5 * (cur[:, 2] + nxt[:, 2]) * t / nsub
            cur = nxt
        return cur, zi

    def _drive_lab(self, r, rabi, delta, phase, t, nsub):
        uniq, inv = np.unique(delta, return_inverse=True)
        if len(uniq) > 64:
            raise ValueError("the lab-frame path integrates each distinct detuning; use a narrow bath or fewer shots")
        times = np.linspace(0.0, t, nsub + 1)
        rots = np.array([unitary_to_rotation(lab_frame_propagator(rabi, self.world.system.zeeman, times, detuning=d, phase=phase)) for d in uniq])
        traj = np.einsum("utij,nj->nuti", rots, r)  # small: shots x uniq x steps
        sel = traj[np.arange(len(r)), inv]  # (shots, steps, 3)
        z = sel[:, :, 2]
        zi = np.sum(0.5 * (z[:, 1:] + z[:, :-1]), axis=1) * t / nsub
        return sel[:, -1, :], zi

    def _wait(self, r, angle, t, g_down, g_up):
        c, s = np.cos(angle), np.sin(angle)
        x = r[:, 0] * c - r[:, 1] * s
        y = r[:, 0] * s + r[:, 1] * c
        z = r[:, 2]
        total = g_down + g_up
        if total > 0 and t > 0:
            z_eq = (g_down - g_up) / total
            decay = math.exp(-total * t)
            z_new = z_eq + (z - z_eq) * decay
            trans = math.exp(-0.5 * total * t)
            x, y = x * trans, y * trans
            # exact time integral of the exponential relaxation
            zi = z_eq * t + (z - z_eq) * (1.0 - decay) / total
        else:
            z_new = z
            zi = z * t
        return np.stack([x, y, z_new], axis=1), zi

    def _noise_phases(self, rng) -> np.ndarray | None:
        """Per-shot accumulated noise phase for every wait element, in order."""
        spec = self.world.noise
        if spec is None or (spec.amplitude == 0 and spec.white_level == 0 and spec.quasistatic_sigma == 0):
            return None
        marks = []
        t_now = 0.0
        for el in self.elements:
            d = _element_duration(el, self.world)
            if el.kind == "wait":
                marks.append((t_now, t_now + d))
            t_now += d
        if not marks or t_now == 0:
            return None
        dt = max(t_now / 4096.0, 0.5 / spec.high_cutoff)
        eff = replace(spec, high_cutoff=min(spec.high_cutoff, 0.5 / dt), quasistatic_sigma=0.0)
        out = np.zeros((self.shots, len(marks)))
        if eff.amplitude > 0 or eff.white_level > 0:
            if eff.high_cutoff <= eff.low_cutoff:
                raise ValueError("sequence too long for the noise spectrum's band on a 4096-point grid")
            traj = generate_noise_trajectory(eff, t_now, dt, rng, n_realizations=self.shots)
            edges = np.array(marks).ravel()
            cum = _cumulative_linear(traj.values, traj.dt, np.minimum(edges, traj.times[-1]))
            out += TWO_PI * (cum[:, 1::2] - cum[:, 0::2])
        if spec.quasistatic_sigma:
            qs = rng.normal(0.0, spec.quasistatic_sigma, self.shots)
            out += TWO_PI * qs[:, None] * np.array([b - a for a, b in marks])[None, :]
        return out


def _param_env(seq: PulseSequence, sweep_values: dict[str, float]) -> dict[str, float]:
    env = dict(sweep_values)
    for name, val in seq.params.items():
        if name not in env:
            env[name] = evaluate(val, env)
    return env


def _concrete_elements(seq: PulseSequence, point: tuple[int, ...], interleave_value: float | None) -> list[_Concrete]:
    bare = {s.field: float(s.values[i]) for s, i in zip(seq.sweeps, point) if s.element is None}
    env = _param_env(seq, bare)
    out = []
    for k, el in enumerate(seq.elements):
        f = {name: evaluate(v, env) for name, v in el.fields.items()}
        for s, i in zip(seq.sweeps, point):
            if s.element == k:
                f[s.field] = float(s.values[i])
        if seq.interleave is not None and seq.interleave.element == k and interleave_value is not None:
            fld = seq.interleave.field
            if fld == "phase" and "mwphase" in f:
                f["mwphase"] += 0.5 * interleave_value
            else:
                f[fld] = f.get(fld, 0.0) + interleave_value
        for key in ("t", "tau_min", "tau_max", "tc", "readout"):
            if key in f and f[key] < 0:
                raise ValueError(f"line {el.line}: negative duration {el.kind}.{key}={f[key]!r}")
        out.append(_Concrete(el.kind, f, el.mode, el.line))
    return out


def element_duration(seq: PulseSequence, world: World, label: str, point: tuple[int, ...] = ()) -> float:
    """Duration of the element named ``label`` at a sweep point."""
    point = point or tuple(0 for _ in seq.sweeps)
    for el, conc in zip(seq.elements, _concrete_elements(seq, point, None)):
        if el.name == label:
            return _element_duration(conc, world)
    raise KeyError(f"no element named {label!r}")


def sequence_duration(seq: PulseSequence, world: World, point: tuple[int, ...] = ()) -> float:
    """Summed element durations at a sweep point (cooling excluded)."""
    point = point or tuple(0 for _ in seq.sweeps)
    return sum(_element_duration(el, world) for el in _concrete_elements(seq, point, None))


def run_experiment(
    seq: PulseSequence,
    world: World,
    *,
    shots: int | None = None,
    seed: int | None = None,
    threads: int = 1,
    rwa: bool = True,
    record_z: bool = False,
    metadata: dict[str, str] | None = None,
) -> ExperimentResult:
    """Evaluate every sweep point of ``seq``; deterministic in ``(seq, world, shots, seed)``.

    With ``record_z`` the result carries ``extra["mean_z"]`` (z-projection
    time-averaged over drive and wait elements) and ``extra["final_z"]``
    (z-projection entering the first readout), both ``(points, shots)`` and
    averaged over interleaved variants.
    """
    shots = shots if shots is not None else (seq.shots or 1000)
    seed = seed if seed is not None else seq.seed
    if seed is None:
        raise ExperimentError("a seed is required")
    if shots < 1:
        raise ExperimentError("shots must be >= 1")
    ctx = _Context(world, seed)
    points = list(product(*[range(len(s.values)) for s in seq.sweeps])) if seq.sweeps else [()]
    variants = list(seq.interleave.values) if seq.interleave else [None]

    def one(idx: int):
        point = points[idx]
        try:
            per_variant = []
            shared: dict = {}
            zs = []
            zf = []
            for v in variants:
                els = _concrete_elements(seq, point, v)
                runner = _PointRunner(ctx, els, shots, rwa, record_z)
                sig, mz, fz = runner.run(np.random.default_rng([seed, idx]), shared)
                per_variant.append(sig)
                zs.append(mz)
                zf.append(fz)
        except (ValueError, ArithmeticError, KeyError) as exc:
            ctx_txt = ", ".join(f"{s.label}={float(s.values[i])!r}" for s, i in zip(seq.sweeps, point))
            raise ExperimentError(f"sweep point {idx} ({ctx_txt}): {exc}") from exc
        s = per_variant[0] if len(per_variant) == 1 else 0.5 * (per_variant[0] - per_variant[1])
        mean = s.mean(axis=0)
        se = s.std(axis=0, ddof=1) / math.sqrt(shots) if shots > 1 else np.zeros_like(mean)
        return mean, se, np.mean(zs, axis=0), np.mean(zf, axis=0)

    if threads > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(points))))
    else:
        results = [one(i) for i in range(len(points))]

    axes = [Axis(s.label, s.values.copy(), _UNIT_OF.get(s.dimension, "")) for s in seq.sweeps]
    trace_bins = 0
    for el in seq.elements:
        if el.kind == "readout" and el.mode == "trace":
            trace_bins = int(evaluate(el.fields.get("bins", 200.0), _param_env(seq, {})))
            dur = evaluate(el.fields.get("t", DEFAULT_READOUT), _param_env(seq, {}))
            edges = np.linspace(0.0, dur, trace_bins + 1)
            axes.append(Axis("readout.time", 0.5 * (edges[1:] + edges[:-1]), "s"))
    mean = np.concatenate([np.atleast_1d(r[0]) for r in results])
    se = np.concatenate([np.atleast_1d(r[1]) for r in results])
    pump = ctx.pumping(DEFAULT_READOUT)
    meta = {
        "seed": str(seed),
        "shots": str(shots),
        "interleave": "none" if not seq.interleave else f"{seq.elements[seq.interleave.element].label()}.{seq.interleave.field} {seq.interleave.values[0]!r} {seq.interleave.values[1]!r}",
        "rwa": str(rwa).lower(),
        "signal_bright": repr(float(pump["up"][0])),
        "signal_dark": repr(float(pump["down"][0])),
        "holespin_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
    }
    if metadata:
        meta = {**metadata, **meta}
    res = ExperimentResult(axes, mean, se, meta)
    if record_z:
        # per point and shot, averaged over the interleaved variants
        res.extra["mean_z"] = np.stack([r[2] for r in results])
        res.extra["final_z"] = np.stack([r[3] for r in results])
    return res
