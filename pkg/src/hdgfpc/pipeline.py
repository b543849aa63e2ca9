"""End-to-end solve: local assembly, condensation, global solve, recovery."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .basis import ReferenceElement, build_reference_element
from .hdg_assembly import (GlobalTraceSystem, TraceDofMap, assemble_global,
                           build_dof_map, dump_matrix)
from .linear_solver import (ConditionEstimate, SolveResult, SolverOptions,
                            condition_estimate, solve_spd)
from .local_ops import ProblemData, assemble_local, condense
from .mesh import Mesh2D
from .recovery import Solution, recover_local_fields


@dataclass
class RunResult:
    solution: Solution
    system: GlobalTraceSystem
    dofmap: TraceDofMap
    solve: SolveResult
    condition: Optional[ConditionEstimate] = None
    timings: dict = field(default_factory=dict)
    local_systems: list = field(default_factory=list, repr=False)


def assemble_system(mesh: Mesh2D, ref: ReferenceElement, data: ProblemData):
    """Local blocks, their Schur complements and the global system."""
    data.validate(mesh)
    dofmap = build_dof_map(mesh, ref)
    local = [assemble_local(mesh, ref, k, data) for k in range(mesh.n_elements)]
    system = assemble_global([condense(ls) for ls in local], dofmap, data)
    return local, dofmap, system


def solve_problem(mesh: Mesh2D, order, data: ProblemData,
                  options: SolverOptions | None = None, *, condition: bool = False,
                  dump_matrix_to=None) -> RunResult:
    ref = order if isinstance(order, ReferenceElement) else build_reference_element(order)
    timings = {}
    t0 = time.perf_counter()
    local, dofmap, system = assemble_system(mesh, ref, data)
    timings["assembly"] = time.perf_counter() - t0
    if dump_matrix_to is not None:
        dump_matrix(system, dump_matrix_to)

    t0 = time.perf_counter()
    result, factor = solve_spd(system, options=options)
    timings["solve"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    sol = recover_local_fields(mesh, ref, data, local, dofmap, result.x)
    timings["recovery"] = time.perf_counter() - t0

    cond = None
    if condition:
        t0 = time.perf_counter()
        cond = condition_estimate(system, factor)
        timings["condition"] = time.perf_counter() - t0
    return RunResult(sol, system, dofmap, result, cond, timings, local)
