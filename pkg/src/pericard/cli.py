"""Command-line front end.

Verbs: ``run``, ``sweep``, ``calibrate``, ``mesh-info`` and ``validate``.
Heavy modules are imported inside the commands so that thread settings
from ``PERICARD_NUM_THREADS`` or ``--deterministic`` reach the numerical
libraries before they start.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

THREAD_ENV = "PERICARD_NUM_THREADS"
_LIB_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")

log = logging.getLogger("pericard")


def _set_threads(n):
    for var in _LIB_THREAD_VARS:
        os.environ[var] = str(n)


def _scenarios_for(cfg):
    from . import scenarios as S

    kind = cfg.scenario
    if kind == "ellipsoid-benchmark":
        return S.ellipsoid_benchmark(cfg)
    if kind.startswith("ellipsoid-"):
        return [S.ellipsoid_case(kind.split("-", 1)[1], cfg)]
    if kind == "apex":
        return [S.case_apex(cfg)]
    if kind == "normal":
        return [S.case_normal(cfg)]
    return [S.Scenario(cfg.name, cfg)]


def _out_root(args, cfg):
    from pathlib import Path

    return Path(args.out or cfg.output.directory)


def cmd_run(args):
    from .config import parse_config
    from .scenarios import run_scenario

    cfg = parse_config(args.config)
    root = _out_root(args, cfg)
    scns = _scenarios_for(cfg)
    for scn in scns:
        out = root / scn.name if len(scns) > 1 else root
        log.info("running %s -> %s", scn.name, out)
        res = run_scenario(scn, out)
        print(f"{scn.name}: {len(res.series['t']) - 1} steps, max tau {res.max_tau / 1e3:.3f} kPa")
    return 0


def cmd_sweep(args):
    from .config import parse_config
    from .output import TimeSeriesWriter
    from .scenarios import Scenario, calibrate_contractility, run_scenario, sweep_kp, sweep_summary

    cfg = parse_config(args.config)
    if cfg.sweep is None:
        print("config has no 'sweep' block", file=sys.stderr)
        return 2
    root = _out_root(args, cfg)
    root.mkdir(parents=True, exist_ok=True)
    base = _scenarios_for(cfg)[0]
    members = sweep_kp(base, cfg.sweep.values, cfg.sweep.damping)
    cols = ["k_p_kPa_mm", "sigma0_kPa", "max_tau_kPa", "max_mean_contact_stress_kPa", "pericardial_volume_change_ml", "esv_ml"]
    with TimeSeriesWriter(root / "summary.csv", cols) as w:
        for k, scn in zip(cfg.sweep.values, members):
            if cfg.sweep.recalibrate:
                if cfg.calibration is None:
                    print("sweep.recalibrate needs a 'calibration' block", file=sys.stderr)
                    return 2
                c = cfg.calibration
                cal = calibrate_contractility(scn, c.target_esv, c.tol, c.bracket, c.max_iter, c.group)
                scn = Scenario(scn.name, cal.result.simulation.config)
            res = run_scenario(scn, root / scn.name)
            w.write(sweep_summary(res, k))
    print(f"sweep summary written to {root / 'summary.csv'}")
    return 0


def cmd_calibrate(args):
    from .config import parse_config
    from .output import TimeSeriesWriter
    from .scenarios import calibrate_contractility

    cfg = parse_config(args.config)
    if cfg.calibration is None:
        print("config has no 'calibration' block", file=sys.stderr)
        return 2
    c = cfg.calibration
    scn = _scenarios_for(cfg)[0]
    cal = calibrate_contractility(scn, c.target_esv, c.tol, c.bracket, c.max_iter, c.group)
    root = _out_root(args, cfg)
    root.mkdir(parents=True, exist_ok=True)
    with TimeSeriesWriter(root / "calibration.csv", ["scale", "esv_ml"]) as w:
        for s, v in cal.samples:
            w.write({"scale": s, "esv_ml": v * 1e6})
    print(f"sigma0 = {cal.sigma0 / 1e3:.4f} kPa, max tau = {cal.max_tau / 1e3:.4f} kPa, ESV = {cal.esv * 1e6:.4f} ml after {cal.iterations} iterations")
    return 0


def cmd_mesh_info(args):
    import numpy as np

    from .mesh import cavity_volume, check_jacobians, load_gmsh

    mesh = load_gmsh(args.file, scale=args.scale)
    print(f"nodes: {mesh.n_nodes}  elements: {mesh.n_elements}  dofs: {3 * mesh.n_nodes}")
    for r in np.unique(mesh.regions):
        print(f"region {int(r)} ({mesh.region_names.get(int(r), '-')}): {int(np.sum(mesh.regions == r))} elements")
    for tag, faces in sorted(mesh.surfaces.items()):
        kind = " (closure)" if tag in mesh.closures else ""
        print(f"surface {tag}{kind}: {len(faces)} faces")
    for cav in sorted(mesh.cavities):
        print(f"cavity {cav}: {cavity_volume(mesh, cav) * 1e6:.4f} ml")
    jac = check_jacobians(mesh)
    print(f"min Jacobian determinant: {float(np.min(jac)):.4e}")
    return 0


def cmd_validate(args):
    from .config import parse_config
    from .scenarios import build_mesh

    cfg = parse_config(args.config)
    for scn in _scenarios_for(cfg):
        build_mesh(scn.config)
    print(f"{args.config}: valid ({cfg.scenario})")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pericard", description="Cardiac mechanics with pericardial boundary conditions")
    p.add_argument("--deterministic", action="store_true", help="single-threaded numerics for bit-identical output")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, helptext in (
        ("run", cmd_run, "run the configured scenario(s)"),
        ("sweep", cmd_sweep, "pericardial stiffness sweep"),
        ("calibrate", cmd_calibrate, "calibrate contractility to an end-systolic volume"),
        ("validate", cmd_validate, "check a config and its geometry"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
        if name != "validate":
            sp.add_argument("--out", help="output directory (overrides output.directory)")
        sp.set_defaults(func=fn)
    sp = sub.add_parser("mesh-info", help="summarise a Gmsh mesh file")
    sp.add_argument("file")
    sp.add_argument("--scale", type=float, default=1e-3, help="file-to-metre factor (default mm)")
    sp.set_defaults(func=cmd_mesh_info)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.deterministic:
        _set_threads(1)
    elif os.environ.get(THREAD_ENV):
        _set_threads(int(os.environ[THREAD_ENV]))
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")

    from .config import ConfigError
    from .mesh import MeshError
    from .solver import ConvergenceError

    try:
        return args.func(args)
    except (ConfigError, MeshError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ConvergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
