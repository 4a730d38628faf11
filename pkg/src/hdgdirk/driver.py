"""Configured runs, convergence studies, integrator comparisons and snapshots.

Every run writes ``history.csv`` (one row per attempted step) and
``summary.json`` into its output directory. The output root defaults to the
``HDGDIRK_OUTPUT`` environment variable, or ``./runs``.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mesh as meshmod
from .approximation import Discretization, StateTriple
from .hdg import HDGOperator, HDGProblem
from .physics import Euler, entropy, pressure, radexp_initial, radexp_model, rotgauss_model
from .solvers import LinearConfig, NewtonConfig
from .time_integration import (TABLEAU_NAMES, ControllerConfig, budget_ok,
                               integrate_adaptive, integrate_bdf, integrate_fixed, tableau)

log = logging.getLogger(__name__)

PROBLEMS = ("rotating_gaussian", "radial_expansion_wave")
INTEGRATORS = TABLEAU_NAMES + ("bdf2", "bdf3")
MODES = ("fixed_dt", "adaptive")
HISTORY_COLUMNS = ("t", "dt", "e", "r", "accepted", "newton_iters", "cum_newton",
                   "error_or_entropy")
OUTPUT_ENV = "HDGDIRK_OUTPUT"

_PROBLEM_DEFAULTS = {
    "rotating_gaussian": {"bbox": (-0.5, 0.5, -0.5, 0.5), "T": math.pi / 4},
    "radial_expansion_wave": {"bbox": (-4.0, 4.0, -4.0, 4.0), "T": 2.0},
}


class ConfigError(ValueError):
    """Invalid run configuration; names the field and, if known, the line."""

    def __init__(self, field_name, message, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field_name}: {message}{where}")
        self.field = field_name
        self.line = line


@dataclass
class RunConfig:
    problem: str = "rotating_gaussian"
    nx: int = 16
    ny: int | None = None
    mesh_file: str | None = None
    degree: int = 3
    integrator: str = "hairer_wanner"
    mode: str = "adaptive"
    dt: float | None = None
    tol: float | None = None
    dt0: float | None = None
    dt_min: float | None = None
    dt_max: float | None = None
    T: float | None = None
    gamma: float = 3.0
    nu: float = 1e-3
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    gmres_rtol: float = 1e-4
    gmres_restart: int = 30
    gmres_max_iter: int = 500
    output_dir: str | None = None
    snapshot: bool = False

    def validate(self, lines: dict | None = None) -> "RunConfig":
        lines = lines or {}

        def fail(name, msg):
            raise ConfigError(name, msg, lines.get(name))

        if self.problem not in PROBLEMS:
            fail("problem", f"must be one of {', '.join(PROBLEMS)}, got {self.problem!r}")
        if self.integrator not in INTEGRATORS:
            fail("integrator", f"must be one of {', '.join(INTEGRATORS)}, got {self.integrator!r}")
        if self.mode not in MODES:
            fail("mode", f"must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.degree not in (1, 2, 3, 4):
            fail("degree", f"must be 1, 2, 3 or 4, got {self.degree}")
        if self.mesh_file is None:
            if self.nx < 1:
                fail("nx", "must be at least 1")
            if self.ny is not None and self.ny < 1:
                fail("ny", "must be at least 1")
        if self.integrator.startswith("bdf") and self.mode != "fixed_dt":
            fail("mode", "BDF integrators only run with fixed_dt")
        if self.mode == "adaptive":
            if self.tol is None or not self.tol > 0:
                fail("tol", "adaptive mode needs a positive tol")
            if self.dt is not None:
                fail("dt", "set tol, not dt, in adaptive mode")
        else:
            if self.dt is None or not self.dt > 0:
                fail("dt", "fixed_dt mode needs a positive dt")
            if self.tol is not None:
                fail("tol", "set dt, not tol, in fixed_dt mode")
        for name in ("dt0", "dt_min", "dt_max", "T", "nu", "newton_tol", "gmres_rtol"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                fail(name, "must be nonnegative")
        if not self.gamma > 1:
            fail("gamma", "must exceed 1")
        if not 0 < self.gmres_rtol < 1:
            fail("gmres_rtol", "must lie in (0, 1)")
        return self

    @property
    def final_time(self) -> float:
        return self.T if self.T is not None else _PROBLEM_DEFAULTS[self.problem]["T"]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _field_types():
    out = {}
    for f in dataclasses.fields(RunConfig):
        t = str(f.type)
        if t.startswith("int"):
            out[f.name] = int
        elif t.startswith("float"):
            out[f.name] = float
        elif t.startswith("bool"):
            out[f.name] = bool
        else:
            out[f.name] = str
    return out


FIELD_TYPES = _field_types()


def coerce(name: str, raw, line=None):
    """Convert a textual value to the type of config field ``name``."""
    if name not in FIELD_TYPES:
        raise ConfigError(name, "unknown configuration key", line)
    if raw is None:
        return None
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("none", ""):
        return None
    kind = FIELD_TYPES[name]
    try:
        if kind is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        return kind(text)
    except ValueError:
        raise ConfigError(name, f"cannot parse {text!r} as {kind.__name__}", line) from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a flat ``key = value`` file (``#`` comments), then apply overrides."""
    text = Path(path).read_text()
    lines = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        key = line.split("#", 1)[0].split("=", 1)[0].strip()
        if key:
            lines.setdefault(key, lineno)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).replace("\n", " ")) from None
    values = {k: coerce(k, v, lines.get(k)) for k, v in parser["run"].items()}
    for k, v in (overrides or {}).items():
        values[k] = coerce(k, v)
    return RunConfig(**values).validate(lines)


def write_config(config: RunConfig, path) -> None:
    rows = [f"{k} = {v}" for k, v in dataclasses.asdict(config).items() if v is not None]
    Path(path).write_text("\n".join(rows) + "\n")


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


# ---------------------------------------------------------------------------
# problem setup


@dataclass
class Setup:
    mesh: meshmod.Mesh
    disc: Discretization
    model: object
    op: HDGOperator
    problem: HDGProblem
    state0: StateTriple
    diagnostic: object
    diagnostic_name: str


def entropy_error(disc: Discretization, w: np.ndarray, gamma: float, s_ref: float) -> float:
    """L2 norm of the element-averaged entropy deviation from ``s_ref``."""
    s = entropy(disc.eval_volume(w), gamma)
    mean = disc.element_average(s)
    return float(np.sqrt(np.sum(disc.areas * (mean - s_ref) ** 2)))


def radexp_entropy(gamma: float) -> float:
    """Reference entropy of the radial wave, taken from the state at rest at the origin."""
    return float(entropy(radexp_initial(0.0, 0.0, gamma), gamma))


def build_mesh(config: RunConfig) -> meshmod.Mesh:
    if config.mesh_file:
        return meshmod.read_mesh(config.mesh_file)
    bbox = _PROBLEM_DEFAULTS[config.problem]["bbox"]
    return meshmod.generate_structured(config.nx, config.ny or config.nx, bbox)


def setup(config: RunConfig) -> Setup:
    config.validate()
    mesh = build_mesh(config)
    if config.problem == "rotating_gaussian":
        model = rotgauss_model(config.nu)
    else:
        model = radexp_model(config.gamma)
    disc = Discretization(mesh, config.degree, model.m)
    op = HDGOperator(disc, model)
    problem = HDGProblem(op, NewtonConfig(tol=config.newton_tol, max_iter=config.newton_max_iter),
                         LinearConfig(rtol=config.gmres_rtol, restart=config.gmres_restart,
                                      max_iter=config.gmres_max_iter))
    state0 = op.initial_state(model.initial)
    if config.problem == "rotating_gaussian":
        def diagnostic(state, t):
            return disc.l2_error(state.w, model.exact, t)
        name = "l2_error"
    else:
        s_ref = radexp_entropy(config.gamma)

        def diagnostic(state, t):
            return entropy_error(disc, state.w, config.gamma, s_ref)
        name = "entropy_error"
    return Setup(mesh, disc, model, op, problem, state0, diagnostic, name)


# ---------------------------------------------------------------------------
# runs


@dataclass
class RunResult:
    config: RunConfig
    state: StateTriple | None
    history: list
    summary: dict
    setup: Setup | None = None
    outdir: Path | None = None


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(HISTORY_COLUMNS)
        for r in history:
            out.writerow([repr(float(r.t)), repr(float(r.dt)), repr(float(r.e)),
                          repr(float(r.r)), int(r.accepted), sum(r.newton_per_stage),
                          r.cum_newton, repr(float(r.diagnostic))])


def read_history(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _summary(config, su, history, state, wall, error=None):
    acc = [r for r in history if r.accepted]
    T = config.final_time
    out = {
        "problem": config.problem,
        "integrator": config.integrator,
        "mode": config.mode,
        "degree": config.degree,
        "n_elements": su.mesh.n_elements if su else None,
        "final_time": T,
        "success": error is None,
        "accepted_steps": len(acc),
        "rejected_steps": len(history) - len(acc),
        "total_newton": history[-1].cum_newton if history else 0,
        "max_gmres_relres": max((r.gmres_max_relres for r in acc
                                 if not math.isnan(r.gmres_max_relres)), default=None),
        "max_newton_residual": max((r.newton_residual for r in acc
                                    if not math.isnan(r.newton_residual)), default=None),
        "wall_time": wall,
    }
    if su is not None and state is not None:
        out[f"final_{su.diagnostic_name}"] = float(su.diagnostic(state, T))
    if config.mode == "adaptive":
        spent = math.fsum(r.e for r in acc)
        out["error_budget_spent"] = spent
        out["error_budget_limit"] = T * config.tol
        out["budget_ok"] = bool(budget_ok(history, 0.0, T, config.tol)) if error is None else None
        out["tol"] = config.tol
    else:
        out["dt"] = config.dt
    if error is not None:
        out["error"] = str(error)
    return out


def run(config: RunConfig, outdir=None, write: bool = True) -> RunResult:
    """Integrate one configured problem to its final time.

    On a hard solver failure the partial history is still written and the
    exception is re-raised.
    """
    config.validate()
    su = setup(config)
    T = config.final_time
    t0 = time.perf_counter()
    history, state, error = [], None, None
    try:
        if config.integrator.startswith("bdf"):
            state, history = integrate_bdf(su.problem, su.state0, 0.0, T, int(config.integrator[-1]),
                                           config.dt, diagnostic=su.diagnostic)
        elif config.mode == "fixed_dt":
            n = int(round(T / config.dt))
            if n < 1 or abs(n * config.dt - T) > 1e-9 * T:
                raise ConfigError("dt", f"dt={config.dt} does not divide T={T}")
            state, history = integrate_fixed(su.problem, su.state0, 0.0, T,
                                             tableau(config.integrator), n,
                                             diagnostic=su.diagnostic)
        else:
            ctrl = ControllerConfig(config.tol, config.dt0, config.dt_min, config.dt_max)
            state, history = integrate_adaptive(su.problem, su.state0, 0.0, T,
                                                tableau(config.integrator), ctrl,
                                                diagnostic=su.diagnostic)
    except ConfigError:
        raise
    except Exception as exc:  # solver hard failure: keep the history
        error = exc
        history = getattr(exc, "history", None) or history
    wall = time.perf_counter() - t0
    summary = _summary(config, su, history, state, wall, error)
    if write:
        outdir = Path(outdir) if outdir is not None else Path(config.output_dir or output_root())
        outdir.mkdir(parents=True, exist_ok=True)
        write_history(history, outdir / "history.csv")
        (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        write_config(config, outdir / "config.txt")
        if config.snapshot and state is not None:
            write_snapshot(state, su.disc, su.model, T, outdir / "final.vtk")
    if error is not None:
        raise error
    return RunResult(config, state, history, summary, su, outdir)


# ---------------------------------------------------------------------------
# studies


@dataclass
class StudySpec:
    """Refinement levels (structured cells per side) and the step/tol rule.

    In fixed-step mode ``dt`` halves with ``h``; in adaptive mode
    ``tol = tol0 * (h / h0) ** min(q, p + 1)``.
    """

    levels: list = field(default_factory=lambda: [4, 8, 16])
    tol0: float | None = None
    dt0: float | None = None

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ConfigError("levels", "a study needs at least two levels")


def observed_orders(errors) -> list:
    e = np.asarray(errors, dtype=float)
    return [float("nan")] + list(np.log2(e[:-1] / e[1:]))


def convergence_study(spec: StudySpec, base: RunConfig, outdir=None) -> list[dict]:
    """Run the base config on each level; writes ``study.csv`` as it goes."""
    outdir = Path(outdir) if outdir is not None else Path(base.output_dir or output_root())
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    n0 = spec.levels[0]
    bbox = _PROBLEM_DEFAULTS[base.problem]["bbox"]
    h0 = meshmod.generate_structured(n0, n0, bbox).h
    try:
        for n in spec.levels:
            h = meshmod.generate_structured(n, n, bbox).h
            if base.mode == "adaptive":
                tol0 = spec.tol0 if spec.tol0 is not None else base.tol
                q = tableau(base.integrator).order
                cfg = base.replace(nx=n, ny=n, tol=tol0 * (h / h0) ** min(q, base.degree + 1))
            else:
                dt0 = spec.dt0 if spec.dt0 is not None else base.dt
                cfg = base.replace(nx=n, ny=n, dt=dt0 * (n0 / n))
            res = run(cfg, outdir / f"level_{n}")
            key = "final_l2_error" if base.problem == "rotating_gaussian" else "final_entropy_error"
            rows.append({"nx": n, "n_elements": 2 * n * n, "h": h,
                         "dt_or_tol": cfg.tol if cfg.mode == "adaptive" else cfg.dt,
                         "error": res.summary[key], "total_newton": res.summary["total_newton"]})
            _write_table(rows, outdir / "study.csv")
    finally:
        _write_table(rows, outdir / "study.csv")
    return rows


def _write_table(rows, path):
    orders = observed_orders([r["error"] for r in rows]) if rows else []
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["nx", "n_elements", "h", "dt_or_tol", "error", "order", "total_newton"])
        for r, o in zip(rows, orders):
            out.writerow([r["nx"], r["n_elements"], repr(r["h"]), repr(r["dt_or_tol"]),
                          repr(r["error"]), repr(o), r["total_newton"]])
    for r, o in zip(rows, orders):
        r["order"] = o


def compare_integrators(base: RunConfig, integrators, bdf_dt: float | None = None,
                        outdir=None) -> dict:
    """Run the base problem with each integrator; DIRK adaptively, BDF at ``bdf_dt``."""
    integrators = list(integrators)
    if len(integrators) < 2:
        raise ConfigError("integrators", "give at least two integrators to compare")
    outdir = Path(outdir) if outdir is not None else Path(base.output_dir or output_root())
    outdir.mkdir(parents=True, exist_ok=True)
    report = {}
    for name in integrators:
        if name not in INTEGRATORS:
            raise ConfigError("integrators", f"unknown integrator {name!r}")
        if name.startswith("bdf"):
            if bdf_dt is None:
                raise ConfigError("bdf_dt", "BDF integrators need a fixed step")
            cfg = base.replace(integrator=name, mode="fixed_dt", dt=bdf_dt, tol=None)
        else:
            cfg = base.replace(integrator=name, mode="adaptive", dt=None)
        res = run(cfg, outdir / name)
        write_history(res.history, outdir / f"{name}.csv")
        acc = [r for r in res.history if r.accepted]
        report[name] = {k: v for k, v in res.summary.items()
                        if k.startswith("final_") or k in ("total_newton", "accepted_steps",
                                                           "rejected_steps", "wall_time")}
        report[name]["mean_dt"] = float(np.mean([r.dt for r in acc])) if acc else None
    (outdir / "compare.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# snapshots


def vertex_values(disc: Discretization, w: np.ndarray) -> np.ndarray:
    """Element values at the vertices, averaged over the elements sharing each vertex."""
    vals = np.einsum("vn,ecn->evc", disc.vertex_samples, w)          # (E,3,m)
    tri = disc.mesh.triangles
    nv = disc.mesh.n_vertices
    acc = np.zeros((nv, w.shape[1]))
    np.add.at(acc, tri.reshape(-1), vals.reshape(-1, w.shape[1]))
    count = np.bincount(tri.reshape(-1), minlength=nv)
    return acc / count[:, None]


def write_snapshot(state: StateTriple, disc: Discretization, model, t: float, path) -> Path:
    """Legacy ASCII VTK with vertex-sampled fields (pressure, Mach, entropy for Euler)."""
    path = Path(path)
    mesh = disc.mesh
    vv = vertex_values(disc, state.w)
    fields = {}
    if isinstance(model, Euler):
        g = model.gamma
        rho = vv[:, 0]
        p = pressure(vv, g)
        fields["density"] = rho
        fields["momentum_x"] = vv[:, 1]
        fields["momentum_y"] = vv[:, 2]
        fields["energy"] = vv[:, 3]
        fields["pressure"] = p
        with np.errstate(invalid="ignore", divide="ignore"):
            speed = np.hypot(vv[:, 1], vv[:, 2]) / rho
            fields["mach"] = speed / np.sqrt(g * p / rho)
            fields["entropy"] = np.log(p) - g * np.log(rho)
    else:
        for c in range(vv.shape[1]):
            fields[f"w{c}" if vv.shape[1] > 1 else "w"] = vv[:, c]
    out = [
        "# vtk DataFile Version 3.0",
        f"hdgdirk snapshot t={t:.12e}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    out += [f"{x:.12e} {y:.12e} 0.0" for x, y in mesh.vertices]
    out.append(f"CELLS {mesh.n_elements} {4 * mesh.n_elements}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {mesh.n_elements}")
    out += ["5"] * mesh.n_elements
    out.append(f"POINT_DATA {mesh.n_vertices}")
    for name, vals in fields.items():
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [f"{v:.12e}" for v in vals]
    path.write_text("\n".join(out) + "\n")
    return path
