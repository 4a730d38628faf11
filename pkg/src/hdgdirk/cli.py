"""Command-line entry point: ``hdgdirk run|study|compare|mesh-gen``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import driver
from .mesh import generate_structured, refine_uniform, write_mesh


def _add_config_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    for f in dataclasses.fields(driver.RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       metavar=driver.FIELD_TYPES[f.name].__name__.upper())


def _config(args) -> driver.RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(driver.RunConfig)
                 if getattr(args, f.name) is not None}
    if args.config:
        return driver.load_config(args.config, overrides)
    values = {k: driver.coerce(k, v) for k, v in overrides.items()}
    return driver.RunConfig(**values).validate()


def _cmd_run(args):
    cfg = _config(args)
    res = driver.run(cfg, args.out)
    print(json.dumps(res.summary, indent=2, sort_keys=True))


def _cmd_study(args):
    # the first-level values double as the base run's tol / dt
    if args.tol is None and args.tol0 is not None:
        args.tol = str(args.tol0)
    if args.dt is None and args.dt0_study is not None:
        args.dt = str(args.dt0_study)
    cfg = _config(args)
    levels = [int(v) for v in args.levels.split(",")]
    spec = driver.StudySpec(levels, tol0=args.tol0, dt0=args.dt0_study)
    rows = driver.convergence_study(spec, cfg, args.out)
    for r in rows:
        print(f"{r['n_elements']:6d}  h={r['h']:.4e}  error={r['error']:.6e}  order={r['order']:.3f}")


def _cmd_compare(args):
    cfg = _config(args)
    names = [s for s in args.integrators.split(",") if s]
    report = driver.compare_integrators(cfg, names, args.bdf_dt, args.out)
    print(json.dumps(report, indent=2, sort_keys=True))


def _cmd_mesh_gen(args):
    bbox = tuple(float(v) for v in args.bbox.split(","))
    mesh = generate_structured(args.nx, args.ny or args.nx, bbox)
    for _ in range(args.refine):
        mesh = refine_uniform(mesh)
    write_mesh(mesh, args.output)
    print(f"wrote {mesh.n_elements} triangles to {args.output}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hdgdirk", description=__doc__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configured simulation")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, help="output directory (default: output_dir or $%s)"
                   % driver.OUTPUT_ENV)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("study", help="convergence study over structured refinement levels")
    _add_config_flags(p)
    p.add_argument("--levels", default="4,8,16", help="cells per side, comma separated")
    p.add_argument("--tol0", type=float, help="tolerance on the first level (adaptive)")
    p.add_argument("--dt0-study", type=float, help="step on the first level (fixed_dt)")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("compare", help="run several integrators on the same problem")
    _add_config_flags(p)
    p.add_argument("--integrators", default="hairer_wanner,al_rabeh,cash,bdf2,bdf3")
    p.add_argument("--bdf-dt", type=float, help="fixed step for the BDF integrators")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("mesh-gen", help="write a structured (optionally refined) mesh file")
    p.add_argument("output", type=Path)
    p.add_argument("--nx", type=int, default=4)
    p.add_argument("--ny", type=int)
    p.add_argument("--bbox", default="-0.5,0.5,-0.5,0.5", help="xmin,xmax,ymin,ymax")
    p.add_argument("--refine", type=int, default=0)
    p.set_defaults(func=_cmd_mesh_gen)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    try:
        args.func(args)
    except driver.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # solver failure; history already written
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
