"""Command line front end.

Commands::

    hdgfpc solve CONFIG          solve one problem, write summary/VTK/CSV
    hdgfpc convergence CONFIG    refinement study, write convergence.csv
    hdgfpc info CONFIG|MESH      unknown counts of the discretization

Exit status is 0 on success, 2 for configuration errors and 3 when the
solver fails.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import BasisError, build_reference_element
from .hdg_assembly import AssemblyError, dg_unknown_count
from .linear_solver import SolverError, SolverOptions
from .local_ops import LocalAssemblyError, ProblemData
from .mesh import MeshError, load_mesh, mesh_size
from .pipeline import solve_problem
from .recovery import (boundary_flux, conductor_charge, equipotential_deviation,
                       evaluate_line, l2_error, write_line_csv)
from . import scenarios as sc
from .vtk import write_vtk

logger = logging.getLogger("hdgfpc")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class ConfigError(ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason


# ---------------------------------------------------------------------------
# Configuration

TOP_KEYS = {"scenario", "mesh", "order", "tau0", "charges", "outputs", "solver"}
SCENARIO_KEYS = {
    "coaxial": {"name", "r0", "r2", "r3", "r1", "V0", "V1", "eps"},
    "manufactured_square": {"name", "eps"},
    "conductor_edge_square": {"name", "eps", "potential"},
    "two_plate": {"name", "plates", "V_left", "V_right", "eps"},
    "custom": {"name", "permittivity", "source", "dirichlet", "neumann"},
}
MESH_KEYS = {
    "coaxial": {"n_azimuthal", "n_radial_inner", "n_radial_outer", "levels"},
    "manufactured_square": {"n", "levels"},
    "conductor_edge_square": {"n", "levels"},
    "two_plate": {"cells_per_unit", "levels"},
    "custom": {"file"},
}
MESH_SIZE_KEY = {"coaxial": "n_azimuthal", "manufactured_square": "n",
                 "conductor_edge_square": "n", "two_plate": "cells_per_unit"}
OUTPUT_KEYS = {"vtk", "lines", "condition", "convergence_csv", "rate_quantity"}
LINE_KEYS = {"name", "start", "end", "samples"}
SOLVER_KEYS = {"method", "rtol", "max_factor_nnz", "cg_iteration_factor"}
RATE_QUANTITIES = ("err_phi_L2", "err_E_L2", "fpc_abs_err")


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(where, "must be an object")
    for key in obj:
        if key.startswith("_"):
            continue  # annotation
        if key not in allowed:
            raise ConfigError(f"{where}.{key}" if where else key, "unknown key")


def _number(obj, key, where, default=None, positive=False):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}.{key}", "required")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{where}.{key}", "must be a finite number")
    if positive and val <= 0:
        raise ConfigError(f"{where}.{key}", "must be positive")
    return float(val)


def _integer(obj, key, where, default=None, minimum=1):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}.{key}", "required")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        raise ConfigError(f"{where}.{key}", f"must be an integer >= {minimum}")
    return val


@dataclass
class RunConfig:
    raw: dict
    scenario: str
    order: int
    tau0: float
    charges: list | None
    solver: SolverOptions
    outputs: dict
    base_dir: Path

    @property
    def mesh_cfg(self) -> dict:
        return self.raw.get("mesh", {})

    @property
    def scenario_cfg(self) -> dict:
        return self.raw["scenario"]


def parse_config(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    _check_keys(raw, TOP_KEYS, "")
    if "scenario" not in raw:
        raise ConfigError("scenario", "required")
    scen = raw["scenario"]
    if not isinstance(scen, dict) or not isinstance(scen.get("name"), str):
        raise ConfigError("scenario.name", "required string")
    name = scen["name"]
    if name not in SCENARIO_KEYS:
        raise ConfigError("scenario.name", f"unknown scenario {name!r}; choose from "
                          + ", ".join(sorted(SCENARIO_KEYS)))
    _check_keys(scen, SCENARIO_KEYS[name], "scenario")
    _check_keys(raw.get("mesh", {}), MESH_KEYS[name], "mesh")

    order = _integer(raw, "order", "", default=1)
    if order > 6:
        raise ConfigError("order", "must be between 1 and 6")
    tau0 = _number(raw, "tau0", "", default=1.0, positive=True)

    charges = None
    if "charges" in raw:
        charges = _parse_charges(raw["charges"])

    solver_raw = raw.get("solver", {})
    _check_keys(solver_raw, SOLVER_KEYS, "solver")
    try:
        solver = SolverOptions(
            method=solver_raw.get("method", "auto"),
            rtol=_number(solver_raw, "rtol", "solver", 1e-10, positive=True),
            max_factor_nnz=_integer(solver_raw, "max_factor_nnz", "solver", 50_000_000),
            cg_iteration_factor=_integer(solver_raw, "cg_iteration_factor", "solver", 50))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("solver.method", str(exc)) from None

    outputs = dict(raw.get("outputs", {}))
    _check_keys(outputs, OUTPUT_KEYS, "outputs")
    for i, line in enumerate(outputs.get("lines", [])):
        where = f"outputs.lines[{i}]"
        _check_keys(line, LINE_KEYS, where)
        for key in ("start", "end"):
            pt = line.get(key)
            if (not isinstance(pt, list) or len(pt) != 2
                    or not all(isinstance(c, (int, float)) for c in pt)):
                raise ConfigError(f"{where}.{key}", "must be [x, y]")
        _integer(line, "samples", where, default=101, minimum=2)
    if outputs.get("rate_quantity", "err_phi_L2") not in RATE_QUANTITIES:
        raise ConfigError("outputs.rate_quantity", "must be one of " + ", ".join(RATE_QUANTITIES))
    return RunConfig(raw, name, order, tau0, charges, solver, outputs, base_dir)


def _parse_charges(val):
    if isinstance(val, list):
        values, unit = val, "C"
    elif isinstance(val, dict):
        _check_keys(val, {"unit", "values"}, "charges")
        values, unit = val.get("values"), val.get("unit", "C")
        if unit not in ("C", "e"):
            raise ConfigError("charges.unit", "must be 'C' or 'e'")
    else:
        raise ConfigError("charges", "must be a list or {unit, values}")
    if not isinstance(values, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in values):
        raise ConfigError("charges", "values must be a list of numbers")
    scale = sc.ELEMENTARY_CHARGE if unit == "e" else 1.0
    return [float(v) * scale for v in values]


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_config(raw, path.parent)


# ---------------------------------------------------------------------------
# Scenario construction


def _charges_for(cfg: RunConfig, count: int):
    if cfg.charges is None:
        return [0.0] * count
    if len(cfg.charges) != count:
        raise ConfigError("charges", f"{len(cfg.charges)} values given for {count} conductor(s)")
    return cfg.charges


def build_scenario(cfg: RunConfig, size=None) -> sc.Scenario:
    """Scenario at mesh resolution `size` (default: the configured one)."""
    s, m, name = cfg.scenario_cfg, cfg.mesh_cfg, cfg.scenario
    if name != "custom" and size is None:
        size = _integer(m, MESH_SIZE_KEY[name], "mesh", default={
            "coaxial": 32, "manufactured_square": 8, "conductor_edge_square": 8,
            "two_plate": 4}[name])
    try:
        if name == "coaxial":
            base = sc.CoaxialSpec()
            spec = sc.CoaxialSpec(*(_number(s, k, "scenario", getattr(base, k))
                                    for k in ("r0", "r2", "r3", "r1", "V0", "V1")),
                                  Q=_charges_for(cfg, 1)[0],
                                  eps=_number(s, "eps", "scenario", sc.EPS0, positive=True))
            inner = m.get("n_radial_inner") if size == m.get("n_azimuthal") else None
            outer = m.get("n_radial_outer") if size == m.get("n_azimuthal") else None
            return sc.coaxial_scenario(spec, size, cfg.tau0, inner, outer)
        if name == "manufactured_square":
            if cfg.charges:
                raise ConfigError("charges", "this scenario has no conductors")
            return sc.manufactured_square(size, _number(s, "eps", "scenario", 1.0, True), cfg.tau0)
        if name == "conductor_edge_square":
            scen = sc.conductor_edge_square(size, _number(s, "eps", "scenario", 1.0, True),
                                            _number(s, "potential", "scenario", 1.0), cfg.tau0)
            if cfg.charges is not None:
                _charges_for(cfg, 1)
                scen.data.charges = list(cfg.charges)
                scen = sc.Scenario(scen.name, scen.mesh, scen.data)  # exact solution no longer applies
            return scen
        if name == "two_plate":
            plates = s.get("plates", "symmetric")
            if plates == "symmetric":
                plates = sc.SYMMETRIC_PLATES
            elif plates == "asymmetric":
                plates = sc.ASYMMETRIC_PLATES
            elif not (isinstance(plates, list) and all(
                    isinstance(p, list) and len(p) == 4 for p in plates)):
                raise ConfigError("scenario.plates",
                                  "'symmetric', 'asymmetric' or a list of [x0, y0, x1, y1]")
            return sc.two_plate_fpc_scenario(
                size, plates, _charges_for(cfg, len(plates)),
                _number(s, "V_left", "scenario", 0.0), _number(s, "V_right", "scenario", 10.0),
                _number(s, "eps", "scenario", sc.EPS0, True), cfg.tau0)
        return _custom_scenario(cfg)
    except MeshError as exc:
        raise ConfigError("mesh", str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("scenario", str(exc)) from None


def _marker_table(obj, where):
    if not isinstance(obj, dict):
        raise ConfigError(where, "must map marker ids to numbers")
    out = {}
    for key, val in obj.items():
        try:
            marker = int(key)
        except ValueError:
            raise ConfigError(f"{where}.{key}", "marker ids must be integers") from None
        out[marker] = _number(obj, key, where)
    return out


def _custom_scenario(cfg):
    s, m = cfg.scenario_cfg, cfg.mesh_cfg
    if "file" not in m:
        raise ConfigError("mesh.file", "required for the custom scenario")
    mesh = load_mesh(cfg.base_dir / m["file"])
    data = ProblemData(permittivity=_number(s, "permittivity", "scenario", 1.0, True),
                       source=_number(s, "source", "scenario", 0.0),
                       dirichlet=_marker_table(s.get("dirichlet", {}), "scenario.dirichlet"),
                       neumann=_marker_table(s.get("neumann", {}), "scenario.neumann"),
                       charges=_charges_for(cfg, mesh.conductor_count), tau0=cfg.tau0)
    try:
        data.validate(mesh)
    except ValueError as exc:
        raise ConfigError("scenario", str(exc)) from None
    return sc.Scenario("custom", mesh, data)


# ---------------------------------------------------------------------------
# Commands


def _conductor_report(sol, scen):
    out = []
    for eta in range(1, sol.mesh.conductor_count + 1):
        entry = {"index": eta,
                 "potential": float(sol.conductor_potentials[eta - 1]),
                 "Q_prescribed": float(sol.data.charges[eta - 1]),
                 "Q_computed": conductor_charge(sol, eta),
                 "equipotential_deviation": equipotential_deviation(sol, eta)}
        if scen.conductor_exact is not None:
            entry["potential_exact"] = float(scen.conductor_exact[eta - 1])
            entry["potential_abs_error"] = abs(entry["potential"] - entry["potential_exact"])
        out.append(entry)
    return out


def run_solve(cfg: RunConfig, out_dir: Path, dump_matrix: bool = False) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    scen = build_scenario(cfg)
    mesh = scen.mesh
    logger.info("solving %s: K=%d, p=%d", scen.name, mesh.n_elements, cfg.order)
    res = solve_problem(mesh, cfg.order, scen.data, cfg.solver,
                        condition=bool(cfg.outputs.get("condition", False)),
                        dump_matrix_to=out_dir / "matrix.txt" if dump_matrix else None)
    sol = res.solution
    summary = {
        "scenario": scen.name,
        "order": cfg.order,
        "tau0": cfg.tau0,
        "mesh": {"K": mesh.n_elements, "N_f": mesh.n_interior_faces,
                 "h": mesh_size(mesh), "mesh_id": sol.provenance["mesh_id"]},
        "N_dof": res.system.n_dof,
        "nnz": res.system.nnz,
        "M": mesh.conductor_count,
        "conductors": _conductor_report(sol, scen),
        "boundary_flux": boundary_flux(sol),
        "solver": {"method": res.solve.method,
                   "relative_residual": res.solve.relative_residual,
                   "iterations": res.solve.iterations,
                   "fallback_used": res.solve.fallback_used,
                   "factor_nnz": res.solve.factor_nnz},
        "symmetry_error": res.system.symmetry_error(),
    }
    if res.condition is not None:
        summary["condition"] = {"kappa": res.condition.kappa,
                                "lambda_max": res.condition.lambda_max,
                                "lambda_min": res.condition.lambda_min,
                                "converged": res.condition.converged}
    if scen.phi_exact is not None:
        e_phi, e_E = l2_error(sol, scen.phi_exact, scen.E_exact)
        summary["errors"] = {"phi_L2": e_phi, "E_L2": e_E}
    if cfg.outputs.get("vtk", True):
        write_vtk(sol, out_dir / "field.vtk")
    for i, line in enumerate(cfg.outputs.get("lines", [])):
        sample = evaluate_line(sol, line["start"], line["end"], line.get("samples", 101))
        write_line_csv(sample, out_dir / f"{line.get('name', f'line{i}')}.csv")
    summary["timings"] = {k: round(v, 6) for k, v in res.timings.items()}
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def run_convergence(cfg: RunConfig, out_dir: Path) -> list:
    levels = cfg.mesh_cfg.get("levels")
    if cfg.scenario == "custom":
        raise ConfigError("scenario.name", "convergence studies need a built-in scenario")
    if not isinstance(levels, list) or len(levels) < 3:
        raise ConfigError("mesh.levels", "at least 3 refinement levels are required")
    if not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in levels):
        raise ConfigError("mesh.levels", "must be positive integers")
    out_dir.mkdir(parents=True, exist_ok=True)
    quantity = cfg.outputs.get("rate_quantity", "err_phi_L2")
    rows = []
    for size in levels:
        scen = build_scenario(cfg, size)
        logger.info("level %d: K=%d", size, scen.mesh.n_elements)
        sol = solve_problem(scen.mesh, cfg.order, scen.data, cfg.solver).solution
        e_phi = e_E = fpc = float("nan")
        if scen.phi_exact is not None:
            e_phi, e_E = l2_error(sol, scen.phi_exact, scen.E_exact)
        if scen.conductor_exact is not None:
            fpc = float(np.max(np.abs(sol.conductor_potentials - np.asarray(scen.conductor_exact))))
        rows.append({"h": mesh_size(scen.mesh), "dof": sol.dofmap.n_dof,
                     "err_phi_L2": e_phi, "err_E_L2": e_E, "fpc_abs_err": fpc})
    # the refinement parameter counts cells per length, so it is inversely
    # proportional to h; doubling it gives log2 of the error ratio
    for i, row in enumerate(rows):
        row["observed_rate"] = None if i == 0 else observed_rate(
            rows[i - 1][quantity], row[quantity], levels[i], levels[i - 1])
    name = cfg.outputs.get("convergence_csv", "convergence.csv")
    with open(out_dir / name, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        cols = ["h", "dof", "err_phi_L2", "err_E_L2", "fpc_abs_err", "observed_rate"]
        writer.writerow(cols)
        for row in rows:
            writer.writerow(["" if row[c] is None else
                             (str(row[c]) if c == "dof" else f"{row[c]:.17g}") for c in cols])
    return rows


def observed_rate(err_coarse, err_fine, h_coarse, h_fine):
    """log(e_H / e_h) / log(H / h), i.e. log2 of the error ratio when h halves."""
    if not (err_coarse > 0 and err_fine > 0):
        return float("nan")
    return math.log(err_coarse / err_fine) / math.log(h_coarse / h_fine)


def info_report(mesh, order: int) -> dict:
    ref = build_reference_element(order)
    n_dof = mesh.n_interior_faces * ref.n_face_nodes + mesh.conductor_count
    dg = dg_unknown_count(mesh, ref)
    return {"K": mesh.n_elements, "N_f": mesh.n_interior_faces, "N_p": ref.n_nodes,
            "N_fp": ref.n_face_nodes, "M": mesh.conductor_count, "N_dof": n_dof,
            "DG_unknowns": dg, "ratio": n_dof / dg, "order": order}


def run_info(path, order=None) -> dict:
    path = Path(path)
    try:
        head = path.read_text().lstrip()[:7]
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read ({exc.strerror})") from None
    if head.startswith("hdgmesh"):
        try:
            mesh = load_mesh(path)
        except MeshError as exc:
            raise ConfigError("mesh", str(exc)) from None
        return info_report(mesh, order or 1)
    cfg = load_config(path)
    return info_report(build_scenario(cfg).mesh, order or cfg.order)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdgfpc", description=__doc__.split("\n")[0])
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one configured problem")
    p.add_argument("config")
    p.add_argument("--output-dir", default="hdgfpc_out")
    p.add_argument("--dump-matrix", action="store_true",
                   help="also write the global matrix as matrix.txt")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("convergence", help="run a mesh refinement study")
    p.add_argument("config")
    p.add_argument("--output-dir", default="hdgfpc_out")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("info", help="print unknown counts for a config or mesh file")
    p.add_argument("source")
    p.add_argument("--order", type=int, default=None,
                   help="polynomial order (mesh input defaults to 1)")
    p.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "info":
            report = run_info(args.source, args.order)
            print(json.dumps(report, indent=2, sort_keys=True))
        elif args.command == "solve":
            summary = run_solve(load_config(args.config), Path(args.output_dir),
                                args.dump_matrix)
            if not args.quiet:
                for c in summary["conductors"]:
                    print(f"conductor {c['index']}: potential {c['potential']:.12g} V, "
                          f"charge {c['Q_computed']:.6g} C/m")
                print(f"N_dof {summary['N_dof']}, residual "
                      f"{summary['solver']['relative_residual']:.3e}")
        else:
            rows = run_convergence(load_config(args.config), Path(args.output_dir))
            if not args.quiet:
                for r in rows:
                    rate = "" if r["observed_rate"] is None else f"{r['observed_rate']:.3f}"
                    print(f"h={r['h']:.4g} dof={r['dof']} err_phi={r['err_phi_L2']:.4e} "
                          f"fpc_err={r['fpc_abs_err']:.4e} rate={rate}")
    except (ConfigError, BasisError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (SolverError, LocalAssemblyError, AssemblyError) as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_SOLVER
    return EXIT_OK
