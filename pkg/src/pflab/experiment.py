"""Experiment configuration, orchestration and result files.

A configuration is a JSON document with sections ``system``, ``solver``,
``initial``, ``output`` plus ``seed`` and ``allow_resonant``.  Validation
collects every violation with its field path.  Each run writes a manifest
(input echo, versions, wall time) and subcommand artifacts into its own
output directory.
"""

from __future__ import annotations

import copy
import csv
from dataclasses import dataclass, replace
import importlib.resources
import json
import math
import os
from pathlib import Path
import platform
import time

import numpy as np
import scipy

from . import __version__
from .dynamics import (
    Coupling,
    CutoffParams,
    FullState,
    HamiltonianSpec,
    LoopState,
    Potential,
    PotentialTerm,
    gauge_transform,
    integrate,
    trajectory_rows,
)
from .errors import ConfigError, NoConvergence, ResonanceError
from .geometry import FlatTorus, ParticleState, Sphere, TWO_PI
from .orbit_solver import (
    alternating_fixed_point,
    double_winding,
    floer_descent,
    galerkin_convergence_probe,
    orbit_residual,
    untwisted,
)
from .smalldiv import (
    SpaceTimeSpectrum,
    continued_fraction,
    diophantine_constants,
    lambda_spectrum,
    resolvent_table,
    sigma_of,
)
from .spectral_field import FieldState, default_bump, random_field, scale_norm

SUBCOMMANDS = ("simulate", "find-orbit", "floer-flow", "spectrum", "diophantine", "probe-galerkin")
EXIT_OK, EXIT_CONFIG, EXIT_RESONANCE, EXIT_NO_CONVERGENCE = 0, 2, 3, 4
OUT_ENV = "PFLAB_OUT"
BENCHMARKS = ("decoupled-circle", "weak-coupling", "sphere-s2", "resonant")

DEFAULTS = {
    "system": {
        "d": 2,
        "Q": {"type": "sphere", "radius": 1.0, "center": [math.pi, math.pi]},
        "k": 8,
        "M": 16,
        "Nt": 64,
        "bump": {"rho0": 1.0, "alpha": 1.0},
        "coupling": {"kind": "linear", "strength": 0.0, "c": 0.0},
        "potential": [],
        "constants": {"c0": None, "c1": None, "c2": None},
    },
    "solver": {
        "tol": 1e-8,
        "max_iter": 30,
        "relaxation": 0.7,
        "continuation_steps": 8,
        "newton_tol": 1e-10,
        "cutoffs": {"R1": 10.0, "R2": 3.0},
        "ds": 0.02,
        "ds_max": 0.05,
        "descent_steps": 5000,
        "steps_per_period": 2048,
        "periods": 1,
        "store_every": 16,
        "scan_limit": 10000,
        "r": 2.0,
        "probe_k": [4, 8, 12, 16, 24],
        "probe_K": 32,
        "probe_alphas": [1.0, 2.0],
        "probe_states": 16,
    },
    "initial": {"q": None, "p": None, "field_scale": 0.0},
    "output": {"directory": None, "formats": ["csv", "json"]},
    "seed": 0,
    "allow_resonant": False,
}


@dataclass
class ExperimentConfig:
    data: dict

    @property
    def system(self) -> dict:
        return self.data["system"]

    @property
    def solver(self) -> dict:
        return self.data["solver"]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def T(self) -> float:
        return float(self.system["T"])


def _merge(base: dict, over: dict, path: str, errors: list) -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        if key not in base:
            errors.append((f"{path}{key}", "unknown field"))
            continue
        if isinstance(base[key], dict) and key not in ("Q",):
            if not isinstance(val, dict):
                errors.append((f"{path}{key}", "expected an object"))
                continue
            out[key] = _merge(base[key], val, f"{path}{key}.", errors)
        else:
            out[key] = val
    return out


def _num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_config(text) -> ExperimentConfig:
    """Validate a JSON document (string or dict); raise ConfigError listing all violations."""
    errors: list = []
    if isinstance(text, (str, bytes)):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("$", f"not valid JSON: {exc}")]) from None
    else:
        raw = copy.deepcopy(text)
    if not isinstance(raw, dict):
        raise ConfigError([("$", "configuration must be a JSON object")])
    system_in = raw.get("system", {})
    period_keys = [k for k in ("T", "sigma") if isinstance(system_in, dict) and k in system_in]
    base = copy.deepcopy(DEFAULTS)
    base["system"]["T"] = None
    base["system"]["sigma"] = None
    data = _merge(base, raw, "", errors)
    sysc, sol = data["system"], data["solver"]

    d = sysc["d"]
    if not _int(d) or d < 1:
        errors.append(("system.d", "must be a positive integer"))
        d = None
    if len(period_keys) != 1:
        errors.append(("system.T", "give exactly one of T or sigma"))
    elif period_keys[0] == "T":
        if not _num(sysc["T"]) or sysc["T"] <= 0:
            errors.append(("system.T", "must be a positive number"))
    else:
        if not _num(sysc["sigma"]) or sysc["sigma"] <= 0:
            errors.append(("system.sigma", "must be a positive number"))
        else:
            sysc["T"] = TWO_PI * math.sqrt(sysc["sigma"])
    for key in ("k", "M"):
        if not _int(sysc[key]) or sysc[key] < 0:
            errors.append((f"system.{key}", "must be a non-negative integer"))
    nt = sysc["Nt"]
    if not _int(nt) or nt < 16 or nt & (nt - 1):
        errors.append(("system.Nt", "must be a power of two >= 16"))
    elif _int(sysc["M"]) and nt < 2 * sysc["M"] + 2:
        errors.append(("system.Nt", "must be at least 2M + 2"))
    bump = sysc["bump"]
    if not _num(bump["rho0"]) or bump["rho0"] == 0:
        errors.append(("system.bump.rho0", "must be a nonzero number"))
    if not _num(bump["alpha"]) or bump["alpha"] <= 0:
        errors.append(("system.bump.alpha", "must be positive"))
    cp = sysc["coupling"]
    if cp["kind"] not in ("linear", "sine_mixed"):
        errors.append(("system.coupling.kind", "must be 'linear' or 'sine_mixed'"))
    if not _num(cp["strength"]) or cp["strength"] < 0:
        errors.append(("system.coupling.strength", "must be a non-negative number"))
    if not _num(cp["c"]):
        errors.append(("system.coupling.c", "must be a number"))
    _check_manifold(sysc["Q"], d, errors)
    if not isinstance(sysc["potential"], list):
        errors.append(("system.potential", "must be a list of terms"))
    else:
        for i, term in enumerate(sysc["potential"]):
            p = f"system.potential[{i}]"
            if not isinstance(term, dict) or "amplitude" not in term or "wavevector" not in term:
                errors.append((p, "needs amplitude and wavevector"))
                continue
            extra = set(term) - {"amplitude", "wavevector", "phase", "time_mode", "time_phase"}
            if extra:
                errors.append((p, f"unknown fields {sorted(extra)}"))
            if not _num(term["amplitude"]):
                errors.append((f"{p}.amplitude", "must be a number"))
            wv = term["wavevector"]
            if not isinstance(wv, list) or (d is not None and len(wv) != d) or not all(_int(v) for v in wv):
                errors.append((f"{p}.wavevector", "must be d integers"))
            if not _int(term.get("time_mode", 0)):
                errors.append((f"{p}.time_mode", "must be an integer"))
    for key in ("tol", "newton_tol", "ds", "ds_max"):
        if not _num(sol[key]) or sol[key] <= 0:
            errors.append((f"solver.{key}", "must be positive"))
    rel = sol["relaxation"]
    if not _num(rel) or not 0 < rel <= 1:
        errors.append(("solver.relaxation", "must lie in (0, 1]"))
    for key in ("max_iter", "descent_steps", "steps_per_period", "periods", "store_every",
                "scan_limit", "probe_K", "probe_states"):
        if not _int(sol[key]) or sol[key] < 1:
            errors.append((f"solver.{key}", "must be a positive integer"))
    if not _int(sol["continuation_steps"]) or sol["continuation_steps"] < 0:
        errors.append(("solver.continuation_steps", "must be a non-negative integer"))
    if _int(sol["scan_limit"]) and sol["scan_limit"] < 2:
        errors.append(("solver.scan_limit", "must be at least 2"))
    for key in ("R1", "R2"):
        if not _num(sol["cutoffs"][key]) or sol["cutoffs"][key] <= 0:
            errors.append((f"solver.cutoffs.{key}", "must be positive"))
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool) or data["seed"] < 0:
        errors.append(("seed", "must be a non-negative integer"))
    if not isinstance(data["allow_resonant"], bool):
        errors.append(("allow_resonant", "must be true or false"))
    init = data["initial"]
    if not _num(init["field_scale"]) or init["field_scale"] < 0:
        errors.append(("initial.field_scale", "must be a non-negative number"))
    for key in ("q", "p"):
        v = init[key]
        if v is not None and (not isinstance(v, list) or (d is not None and len(v) != d)
                              or not all(_num(x) for x in v)):
            errors.append((f"initial.{key}", "must be null or d numbers"))
    T = sysc.get("T")
    if _num(T) and T > 0 and data["allow_resonant"] is False and _num(sol["scan_limit"]):
        try:
            diophantine_constants(sigma_of(T), max(int(sol["scan_limit"]), 2))
        except ResonanceError as exc:
            errors.append(("system.T", f"sigma = T^2/(2 pi)^2 fails the Diophantine scan: {exc}"))
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(data)


def _check_manifold(Q, d, errors):
    if not isinstance(Q, dict) or Q.get("type") not in ("sphere", "torus"):
        errors.append(("system.Q.type", "must be 'sphere' or 'torus'"))
        return
    if Q["type"] == "sphere":
        extra = set(Q) - {"type", "radius", "center"}
        r, c = Q.get("radius"), Q.get("center")
        if not _num(r) or not 0 < r < math.pi:
            errors.append(("system.Q.radius", "must lie in (0, pi)"))
        if not isinstance(c, list) or (d is not None and len(c) != d) or not all(
                _num(x) and 0 <= x < TWO_PI for x in c):
            errors.append(("system.Q.center", "must be d numbers in [0, 2 pi)"))
        if d is not None and d < 2:
            errors.append(("system.Q.type", "a sphere needs d >= 2"))
    else:
        extra = set(Q) - {"type", "axes", "offset"}
        axes, off = Q.get("axes"), Q.get("offset")
        if not isinstance(axes, list) or not axes or not all(_int(a) for a in axes) or (
                d is not None and (len(set(axes)) != len(axes) or min(axes) < 0 or max(axes) >= d)):
            errors.append(("system.Q.axes", "must be distinct axis indices below d"))
        if not isinstance(off, list) or (d is not None and len(off) != d) or not all(_num(x) for x in off):
            errors.append(("system.Q.offset", "must be d numbers"))
    if extra:
        errors.append(("system.Q", f"unknown fields {sorted(extra)}"))


def load_config(path_or_name: str, seed: int | None = None,
                allow_resonant: bool | None = None) -> ExperimentConfig:
    """Read a config file, or one of the bundled benchmarks by name.

    ``seed`` and ``allow_resonant`` override the document before validation.
    """
    p = Path(path_or_name)
    if p.exists():
        text = p.read_text()
    elif path_or_name in BENCHMARKS:
        text = (importlib.resources.files("pflab") / "configs" / f"{path_or_name}.json").read_text()
    else:
        raise ConfigError([("--config", f"no such file or bundled benchmark: {path_or_name}")])
    if seed is None and allow_resonant is None:
        return parse_config(text)
    try:
        raw = json.loads(text)
    except json.JSONDecodeError:
        return parse_config(text)  # reports the syntax error
    if isinstance(raw, dict):
        if seed is not None:
            raw["seed"] = seed
        if allow_resonant is not None:
            raw["allow_resonant"] = allow_resonant
    return parse_config(raw)


# --------------------------------------------------------------------------
# building objects from a config


def build_spec(cfg: ExperimentConfig, coupling_override: dict | None = None) -> HamiltonianSpec:
    s = cfg.system
    d = s["d"]
    Q = s["Q"]
    if Q["type"] == "sphere":
        manifold = Sphere(d, float(Q["radius"]), tuple(Q["center"]))
    else:
        manifold = FlatTorus(d, tuple(Q["axes"]), tuple(Q["offset"]))
    terms = tuple(PotentialTerm(float(t["amplitude"]), tuple(t["wavevector"]), float(t.get("phase", 0.0)),
                                int(t.get("time_mode", 0)), float(t.get("time_phase", 0.0)))
                  for t in s["potential"])
    cp = dict(s["coupling"])
    cp.update(coupling_override or {})
    c = s["constants"]
    return HamiltonianSpec(manifold, default_bump(d, s["k"], s["bump"]["rho0"], s["bump"]["alpha"]),
                           Potential(terms, d), Coupling(cp["kind"], float(cp["strength"]), float(cp["c"])),
                           cfg.T, c["c0"], c["c1"], c["c2"])


def initial_particle(cfg: ExperimentConfig, spec: HamiltonianSpec, rng: np.random.Generator) -> ParticleState:
    init = cfg.data["initial"]
    m = spec.manifold
    q = m.sample_point(rng) if init["q"] is None else m.retract(np.asarray(init["q"], float))
    p = np.zeros(spec.d) if init["p"] is None else np.asarray(init["p"], float)
    return ParticleState(q, m.project(q, p))


def initial_field(cfg: ExperimentConfig, rng: np.random.Generator) -> FieldState:
    s = cfg.system
    scale = cfg.data["initial"]["field_scale"]
    if scale == 0:
        return FieldState.zeros(s["d"], s["k"])
    return random_field(s["d"], s["k"], rng, decay=s["bump"]["alpha"], scale=scale)


# --------------------------------------------------------------------------
# result files


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _encode(obj) -> str:
    """JSON text with every float printed to 17 significant digits (non-finite as null)."""
    return _dumps17(_to_jsonable(obj))


def _dumps17(o, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(o, dict):
        if not o:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_dumps17(v, indent + 1)}" for k, v in o.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(o, list):
        if not o:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in o):
            return "[" + ", ".join(_dumps17(v) for v in o) + "]"
        return "[\n" + ",\n".join(pad + _dumps17(v, indent + 1) for v in o) + "\n" + end + "]"
    if o is None:
        return "null"
    if isinstance(o, bool):
        return "true" if o else "false"
    if isinstance(o, int):
        return str(o)
    if isinstance(o, float):
        return format(o, ".17g") if math.isfinite(o) else "null"
    return json.dumps(o)


def write_json(path: Path, obj) -> None:
    path.write_text(_encode(obj) + "\n")


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _loop_rows(loop: LoopState, spec: HamiltonianSpec):
    u = untwisted(loop)
    d = spec.d
    header = ["t"] + [f"q{i}" for i in range(d)] + [f"p{i}" for i in range(d)] + ["field_h0", "field_h1"]
    rows = []
    for j, t in enumerate(u.times):
        f = FieldState(u.modes, u.a[j])
        rows.append([t, *u.q[j], *u.p[j], scale_norm(f, 0.0), scale_norm(f, 1.0)])
    return header, rows


def _field_rows(loop: LoopState):
    u = untwisted(loop)
    d = u.modes.d
    header = ["j"] + [f"n{i}" for i in range(d)] + ["re", "im"]
    rows = []
    for j in range(u.nt):
        for i in range(u.modes.size):
            rows.append([j, *u.modes.n[i], u.a[j, i].real, u.a[j, i].imag])
    return header, rows


# --------------------------------------------------------------------------
# subcommands


def _simulate(cfg, out, rng):
    spec = build_spec(cfg)
    sol = cfg.solver
    s0 = initial_particle(cfg, spec, rng)
    f0 = initial_field(cfg, rng)
    T = spec.T
    dt = T / sol["steps_per_period"]
    traj = integrate(FullState(s0, f0), 0.0, sol["periods"] * T, dt, spec, store_every=sol["store_every"])
    header, rows = trajectory_rows(traj, spec)
    write_csv(out / "trajectory.csv", header, rows)
    e0 = traj.energies[0]
    write_csv(out / "energy.csv", ["t", "energy", "relative_drift"],
              [[t, e, (e - e0) / abs(e0)] for t, e in zip(traj.energy_times, traj.energies)])
    summary = {"max_relative_drift": traj.max_relative_drift(), "autonomous": spec.potential.autonomous,
               "dt": dt, "steps": len(traj.energies) - 1, "initial_energy": e0}
    write_json(out / "summary.json", summary)
    return summary, ["trajectory.csv", "energy.csv", "summary.json"]


def _find_orbit(cfg, out, rng, tol):
    spec = build_spec(cfg)
    sol = cfg.solver
    s0 = initial_particle(cfg, spec, rng)
    orbit = alternating_fixed_point(s0, spec, nt=cfg.system["Nt"], tol=tol, max_iter=sol["max_iter"],
                                    relaxation=sol["relaxation"],
                                    continuation_steps=sol["continuation_steps"],
                                    newton_tol=sol["newton_tol"],
                                    check_diophantine=not cfg.data["allow_resonant"])
    doubled = orbit_residual(double_winding(orbit.loop), spec).total
    write_csv(out / "loop.csv", *_loop_rows(orbit.loop, spec))
    write_csv(out / "loop_field.csv", *_field_rows(orbit.loop))
    record = {
        "config": cfg.data,
        "residual": orbit.residual,
        "residual_components": orbit.components.as_dict(),
        "action": orbit.action,
        "decay_fit": {"C": orbit.field_decay[0], "alpha": orbit.field_decay[1]},
        "iterations": orbit.iterations,
        "distance_trace": orbit.trace,
        "doubled_winding_residual": doubled,
        "loop_samples": "loop.csv",
        "field_samples": "loop_field.csv",
    }
    write_json(out / "orbit.json", record)
    return {"residual": orbit.residual, "iterations": orbit.iterations}, ["orbit.json", "loop.csv",
                                                                          "loop_field.csv"]


def _floer_flow(cfg, out, rng, tol):
    spec = build_spec(cfg)
    sol = cfg.solver
    nt = cfg.system["Nt"]
    s0 = initial_particle(cfg, spec, rng)
    q = np.tile(s0.q, (nt, 1))
    a = np.array([initial_field(cfg, rng).coeffs for _ in range(nt)])
    u0 = gauge_transform(LoopState(q, np.zeros_like(q), a, spec.T, spec.modes), "forward")
    cut = CutoffParams(sol["cutoffs"]["R1"], sol["cutoffs"]["R2"])
    loop, trace = floer_descent(u0, cut, spec, ds=sol["ds"], steps=sol["descent_steps"], tol=tol,
                                ds_max=sol["ds_max"], check_diophantine=not cfg.data["allow_resonant"])
    inc = [0.0] + list(trace.energy_increments)
    write_csv(out / "descent.csv", ["step", "s", "action", "energy_increment"],
              [[i, s, A, e] for i, (s, A, e) in enumerate(zip(trace.steps, trace.actions, inc))])
    write_csv(out / "loop.csv", *_loop_rows(loop, spec))
    record = {
        "config": cfg.data,
        "converged": trace.converged,
        "stationarity": trace.stationarity,
        "terminal_residual": trace.terminal_residual,
        "action_initial": trace.actions[0],
        "action_final": trace.actions[-1],
        "energy": trace.energy,
        "energy_mismatch": trace.energy_mismatch(),
        "accepted_steps": len(trace.actions) - 1,
        "rejected_steps": trace.rejected,
        "loop_samples": "loop.csv",
    }
    write_json(out / "descent.json", record)
    if not trace.converged:
        raise NoConvergence(f"descent stopped after {sol['descent_steps']} steps "
                            f"with stationarity {trace.stationarity:.3e}")
    return {"converged": trace.converged, "energy_mismatch": trace.energy_mismatch()}, [
        "descent.json", "descent.csv", "loop.csv"]


def _spectrum(cfg, out):
    s = cfg.system
    T = cfg.T
    spec_ = lambda_spectrum(T, s["k"], s["M"], s["d"])
    modes = default_bump(s["d"], s["k"]).modes
    zero = SpaceTimeSpectrum(modes, s["M"], T, np.zeros((2 * s["M"] + 1, modes.size), complex))
    table = resolvent_table(zero, T)
    d = s["d"]
    write_csv(out / "spectrum.csv", ["m"] + [f"n{i}" for i in range(d)] + ["lambda", "divisor", "gain"],
              [[m, *n, lam, div, gain] for m, n, lam, div, gain in table])
    write_csv(out / "shell_minima.csv", ["n2_plus_1", "min_abs_lambda"],
              [[int(N), v] for N, v in zip(spec_.shell_N, spec_.shell_min)])
    record = {"T": T, "sigma": sigma_of(T), "k": s["k"], "M": s["M"], "min_abs_lambda": spec_.min_abs,
              "witness": {"m": spec_.witness[0], "n": list(spec_.witness[1])},
              "fitted_c": spec_.fitted_c, "fitted_exponent": spec_.fitted_exponent,
              "record_slope": spec_.record_slope}
    write_json(out / "spectrum.json", record)
    return {"min_abs_lambda": spec_.min_abs}, ["spectrum.json", "spectrum.csv", "shell_minima.csv"]


def _diophantine(cfg, out):
    sol = cfg.solver
    sigma = sigma_of(cfg.T)
    cf = continued_fraction(sigma)
    report = diophantine_constants(sigma, sol["scan_limit"], sol["r"])
    record = report.as_dict()
    record["continued_fraction"] = {"quotients": cf.quotients, "truncated": cf.truncated}
    write_json(out / "diophantine.json", record)
    return {"best_c": report.best_c}, ["diophantine.json"]


def _probe(cfg, out, rng):
    sol = cfg.solver
    s = cfg.system
    rows, rates = [], {}
    base = build_spec(cfg)
    for alpha in sol["probe_alphas"]:
        spec = replace(base, bump=default_bump(s["d"], sol["probe_K"], s["bump"]["rho0"], alpha))
        pr = galerkin_convergence_probe(spec, sol["probe_k"], n_states=sol["probe_states"],
                                        seed=cfg.seed, cut=CutoffParams(**sol["cutoffs"]))
        rows += [[alpha, k, g] for k, g in pr.rows()]
        rates[str(alpha)] = pr.rate
    write_csv(out / "galerkin.csv", ["alpha", "k", "gap"], rows)
    write_json(out / "galerkin.json", {"K": sol["probe_K"], "rates": rates})
    return {"rates": rates}, ["galerkin.json", "galerkin.csv"]


def output_dir(cfg: ExperimentConfig | None, subcommand: str, out: str | None) -> Path:
    if out:
        return Path(out)
    if cfg is not None and cfg.data["output"]["directory"]:
        return Path(cfg.data["output"]["directory"])
    seed = cfg.seed if cfg is not None else 0
    return Path(os.environ.get(OUT_ENV, "pflab-runs")) / f"{subcommand}-seed{seed}"


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    summary: dict
    files: list


def _versions() -> dict:
    return {"pflab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run_experiment(cfg: ExperimentConfig, subcommand: str, out: str | None = None,
                   tol: float | None = None) -> RunResult:
    """Run one subcommand, write its artifacts and a manifest; map solver errors to exit codes."""
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out_dir = output_dir(cfg, subcommand, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    tol = cfg.solver["tol"] if tol is None else tol
    start = time.perf_counter()
    code, summary, files, error = EXIT_OK, {}, [], None
    try:
        if subcommand == "simulate":
            summary, files = _simulate(cfg, out_dir, rng)
        elif subcommand == "find-orbit":
            summary, files = _find_orbit(cfg, out_dir, rng, tol)
        elif subcommand == "floer-flow":
            summary, files = _floer_flow(cfg, out_dir, rng, tol)
        elif subcommand == "spectrum":
            summary, files = _spectrum(cfg, out_dir)
        elif subcommand == "diophantine":
            summary, files = _diophantine(cfg, out_dir)
        else:
            summary, files = _probe(cfg, out_dir, rng)
    except ResonanceError as exc:
        code = EXIT_RESONANCE
        error = {"type": type(exc).__name__, "message": str(exc),
                 "witness": _to_jsonable(exc.witness), "divisor": exc.divisor}
    except NoConvergence as exc:
        code = EXIT_NO_CONVERGENCE
        error = {"type": type(exc).__name__, "message": str(exc)}
    manifest = {
        "subcommand": subcommand,
        "status": "ok" if code == EXIT_OK else "error",
        "exit_code": code,
        "config": cfg.data,
        "seed": cfg.seed,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - start,
        "outputs": files,
        "summary": summary,
    }
    if error is not None:
        manifest["error"] = error
        write_json(out_dir / "error.json", error)
    write_json(out_dir / "manifest.json", manifest)
    return RunResult(code, out_dir, summary, files)
