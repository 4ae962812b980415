"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 invalid input (parse or validation),
3 solver failure.  A JSON run report is written even when the solve fails,
with status "error" and the partial solve record.  The SDOT_LOG environment
variable (debug/info/warn) sets the log level, default info.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .apps import quantize, register, remesh
from .errors import GeometryError, SolverError, ValidationError
from .io import (RunReport, export_cells, load_mesh, load_points, mesh_digest,
                 points_digest, write_obj, write_run_report, write_weights,
                 write_xyz)
from .laguerre import compute_diagram
from .solver import SolverConfig, damped_newton, verify_solution

log = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; this tool reserves 2 for input
    # validation, so usage problems exit 1 instead
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _add_solver_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eta", type=float, default=1e-6,
                   help="residual target (default 1e-6)")
    p.add_argument("--max-iter", type=int, default=100,
                   help="Newton iteration cap (default 100)")
    p.add_argument("--epsilon0-rule", choices=["half-min", "min"],
                   default="half-min", help="mass floor rule")
    p.add_argument("--jitter", choices=["on-degeneracy", "off"],
                   default="on-degeneracy",
                   help="retry with perturbed sites on degeneracies")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1,
                   help="accepted for compatibility; evaluation is "
                        "sequential and deterministic")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sdot",
                description="semi-discrete transport on triangle soups")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("solve", help="solve for prescribed cell masses")
    s.add_argument("--mesh", required=True, help="OFF or OBJ triangle soup")
    s.add_argument("--points", required=True, help="XYZ or PLY sites")
    s.add_argument("--density", help="per-vertex density sidecar, one per line")
    s.add_argument("--out", help="write the JSON run report here")
    s.add_argument("--export-cells", metavar="CELLS_OBJ",
                   help="export cell polygons to this OBJ")
    s.add_argument("--weights", help="write solved weights here, one per line")
    _add_solver_options(s)

    q = sub.add_parser("quantize", help="equal-mass point distribution")
    q.add_argument("--mesh", required=True)
    q.add_argument("--n", type=int, required=True, help="number of sites")
    q.add_argument("--iters", type=int, default=10,
                   help="centroid update rounds (default 10)")
    q.add_argument("--out", help="write final sites as XYZ")
    q.add_argument("--report", help="write a JSON run report here")
    _add_solver_options(q)

    r = sub.add_parser("remesh", help="dual triangulation at the soup vertices")
    r.add_argument("--mesh", required=True)
    r.add_argument("--density", help="per-vertex density sidecar, one per line")
    r.add_argument("--out", help="write the dual mesh as OBJ")
    r.add_argument("--report", help="write a JSON run report here")
    _add_solver_options(r)

    g = sub.add_parser("register", help="rigid alignment of points to a soup")
    g.add_argument("--mesh", required=True)
    g.add_argument("--points", required=True)
    g.add_argument("--max-outer", type=int, default=10)
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--out", help="write the fitted transform as JSON")
    g.add_argument("--report", help="write a JSON run report here")
    _add_solver_options(g)
    return p


def _config_from(args) -> SolverConfig:
    return SolverConfig(eta=args.eta, max_iterations=args.max_iter,
                        epsilon0_rule=args.epsilon0_rule,
                        jitter_policy=args.jitter, seed=args.seed)


def _cmd_solve(args, report: RunReport) -> None:
    soup = load_mesh(args.mesh, args.density)
    sites = load_points(args.points)
    report.inputs = {"mesh": mesh_digest(soup), "points": points_digest(sites)}
    nu = sites.masses * (soup.total_mass / float(sites.masses.sum()))
    config = _config_from(args)
    psi, rep = damped_newton(soup, sites, nu, config)
    report.solve = rep.to_json_dict()
    cert = verify_solution(soup, rep.sites, nu, psi, config)
    report.certificate = cert.to_json_dict()
    if args.weights:
        write_weights(args.weights, psi)
        report.outputs["weights"] = args.weights
    if args.export_cells:
        diagram = compute_diagram(soup, rep.sites, psi, want_cost=False,
                                  want_geometry=True)
        export_cells(diagram, args.export_cells)
        report.outputs["cells"] = args.export_cells


def _cmd_quantize(args, report: RunReport) -> None:
    soup = load_mesh(args.mesh)
    report.inputs = {"mesh": mesh_digest(soup)}
    result = quantize(soup, args.n, iterations=args.iters,
                      seed=args.seed, config=_config_from(args))
    report.solve = result.reports[-1].to_json_dict() if result.reports else None
    report.extra = {
        "cost_history": [float(c) for c in result.cost_history],
        "update_rounds": result.iterations,
        "update_converged": result.converged,
    }
    if args.out:
        write_xyz(args.out, result.sites.positions)
        report.outputs["points"] = args.out


def _cmd_remesh(args, report: RunReport) -> None:
    soup = load_mesh(args.mesh, args.density)
    report.inputs = {"mesh": mesh_digest(soup)}
    result = remesh(soup, config=_config_from(args))
    report.solve = result.report.to_json_dict()
    mesh = result.mesh
    report.extra = {
        "dual_vertices": int(mesh.vertices.shape[0]),
        "dual_faces": int(mesh.faces.shape[0]),
        "euler_characteristic": mesh.euler_characteristic(),
        "skipped_clusters": mesh.skipped_clusters,
    }
    if args.out:
        write_obj(args.out, mesh.vertices, mesh.faces)
        report.outputs["mesh"] = args.out


def _cmd_register(args, report: RunReport) -> None:
    soup = load_mesh(args.mesh)
    sites = load_points(args.points)
    report.inputs = {"mesh": mesh_digest(soup), "points": points_digest(sites)}
    result = register(soup, sites, max_outer=args.max_outer, tol=args.tol,
                      config=_config_from(args))
    transform = {
        "schema": 1,
        "rotation": np.asarray(result.transform.rotation).tolist(),
        "translation": np.asarray(result.transform.translation).tolist(),
        "rms_history": [float(r) for r in result.rms_history],
        "iterations": result.iterations,
        "converged": result.converged,
    }
    report.extra = {k: v for k, v in transform.items() if k != "schema"}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(transform, fh, indent=2, sort_keys=True)
            fh.write("\n")
        report.outputs["transform"] = args.out


_HANDLERS = {
    "solve": _cmd_solve,
    "quantize": _cmd_quantize,
    "remesh": _cmd_remesh,
    "register": _cmd_register,
}


class _WarningCollector(logging.Handler):
    def __init__(self, sink: list):
        super().__init__(level=logging.WARNING)
        self.sink = sink

    def emit(self, record):
        self.sink.append(record.getMessage())


def main(argv=None) -> int:
    level = os.environ.get("SDOT_LOG", "info").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    # thread count never changes results, so it stays out of the report echo
    public = {k.replace("_", "-"): v for k, v in vars(args).items()
              if k not in ("command", "threads")}
    report = RunReport(command=args.command, arguments=public)
    collector = _WarningCollector(report.warnings)
    logging.getLogger().addHandler(collector)
    rc = 0
    try:
        _HANDLERS[args.command](args, report)
    except (ValidationError, GeometryError, OSError) as exc:
        report.status = "error"
        report.error = str(exc)
        sys.stderr.write(f"sdot: invalid input: {exc}\n")
        rc = 2
    except SolverError as exc:
        report.status = "error"
        report.error = str(exc)
        partial = getattr(exc, "report", None)
        if partial is not None:
            report.solve = partial.to_json_dict()
        sys.stderr.write(f"sdot: solver failed: {exc}\n")
        rc = 3
    finally:
        logging.getLogger().removeHandler(collector)
    report.wall_time_s = time.perf_counter() - t0
    report_path = args.out if args.command == "solve" else getattr(args, "report", None)
    if report_path:
        try:
            write_run_report(report_path, report)
        except OSError as exc:
            sys.stderr.write(f"sdot: cannot write report: {exc}\n")
            rc = rc or 2
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
