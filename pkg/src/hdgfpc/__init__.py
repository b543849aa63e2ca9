"""Hybridizable discontinuous Galerkin electrostatics on triangles with
floating-potential conductors."""

from .basis import ReferenceElement, build_reference_element
from .hdg_assembly import GlobalTraceSystem, TraceDofMap, assemble_global, build_dof_map
from .linear_solver import SolverOptions, condition_estimate, solve_spd
from .local_ops import LocalSystem, ProblemData, assemble_local, condense
from .mesh import BoundaryTag, Mesh2D, build_skeleton, load_mesh, save_mesh
from .pipeline import RunResult, solve_problem
from .recovery import (Solution, conductor_charge, equipotential_deviation, evaluate_line,
                       l2_error, recover_local_fields)
from .scenarios import (CoaxialSpec, analytic_coaxial, coaxial_scenario, conductor_edge_square,
                        manufactured_square, two_plate_fpc_scenario)

__version__ = "0.1.0"
