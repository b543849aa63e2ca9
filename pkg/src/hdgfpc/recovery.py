"""Recovery of element fields from the trace solution and post-processing.

Charge convention: the charge of a conductor is the flux of ``eps E`` out of
the conductor, i.e. along the normal pointing from the conductor into the
meshed region (minus the element's outward normal on conductor faces).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .basis import ReferenceElement, evaluate_basis, face_points
from .hdg_assembly import TraceDofMap
from .local_ops import LocalSystem, ProblemData, _evaluate, local_solve
from .mesh import Mesh2D, TagKind


class RecoveryError(RuntimeError):
    pass


def mesh_fingerprint(mesh: Mesh2D) -> str:
    h = hashlib.sha256()
    for arr in (mesh.vertices, mesh.elements, mesh.face_kind, mesh.face_marker):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Solution:
    """Discrete solution: trace unknowns plus recovered element fields."""

    mesh: Mesh2D
    ref: ReferenceElement
    data: ProblemData
    dofmap: TraceDofMap
    trace: np.ndarray                   # (N_f * N_fp,)
    conductor_potentials: np.ndarray    # (M,)
    phi: np.ndarray                     # (K, Np)
    E: np.ndarray                       # (K, Np, 2)
    tau: np.ndarray                     # (K,)
    provenance: dict = field(default_factory=dict)

    @property
    def global_vector(self) -> np.ndarray:
        return np.concatenate([self.trace, self.conductor_potentials])

    def element_trace(self, k: int) -> np.ndarray:
        """Element trace columns (faces then conductors), zeros where the face
        carries no unknowns."""
        dofs = self.dofmap.element_dofs[k]
        x = self.global_vector
        return np.where(dofs >= 0, x[np.maximum(dofs, 0)], 0.0)


def recover_local_fields(mesh: Mesh2D, ref: ReferenceElement, data: ProblemData,
                         local_systems, dofmap: TraceDofMap, x: np.ndarray) -> Solution:
    """Back-substitute every element: [phi; E] = A^-1 (F - A_bar lambda)."""
    x = np.asarray(x, dtype=float)
    if x.size != dofmap.n_dof:
        raise RecoveryError(f"trace vector has {x.size} entries, expected {dofmap.n_dof}")
    if len(local_systems) != mesh.n_elements:
        raise RecoveryError("one local system per element is required")
    Np = ref.n_nodes
    phi = np.empty((mesh.n_elements, Np))
    E = np.empty((mesh.n_elements, Np, 2))
    tau = np.empty(mesh.n_elements)
    for k, (local, dofs) in enumerate(zip(local_systems, dofmap.element_dofs)):
        if not isinstance(local, LocalSystem) or local.lu is None:
            raise RecoveryError(f"element {k} has no factorized local system")
        lam = np.where(dofs >= 0, x[np.maximum(dofs, 0)], 0.0)
        u = local_solve(local, lam)
        phi[k] = u[:Np]
        E[k, :, 0] = u[Np:2 * Np]
        E[k, :, 1] = u[2 * Np:]
        tau[k] = local.tau
    n_trace = dofmap.n_trace_dofs
    prov = {"mesh_id": mesh_fingerprint(mesh), "order": ref.order, "tau0": data.tau0}
    return Solution(mesh, ref, data, dofmap, x[:n_trace].copy(), x[n_trace:].copy(),
                    phi, E, tau, prov)


# ---------------------------------------------------------------------------
# Face helpers


def _face_geometry(mesh, k, j):
    a, b = ((0, 1), (1, 2), (2, 0))[j]
    v = mesh.vertices[mesh.elements[k]]
    d = v[b] - v[a]
    length = float(np.hypot(d[0], d[1]))
    return length, np.array([d[1], -d[0]]) / length


def _face_quadrature_xy(mesh, k, j, ref):
    J, _ = mesh.jacobian(k)
    v0 = mesh.vertices[mesh.elements[k, 0]]
    return v0[None, :] + face_points(j, ref.edge_quad_points) @ J.T


def _conductor_index(sol, eta):
    if not 1 <= eta <= sol.mesh.conductor_count:
        raise ValueError(f"conductor index {eta} outside 1..{sol.mesh.conductor_count}")


def conductor_charge(sol: Solution, eta: int) -> float:
    """Charge per unit depth on conductor `eta`: sum over its faces of the
    flux of eps E out of the conductor."""
    _conductor_index(sol, eta)
    mesh, ref = sol.mesh, sol.ref
    w = ref.edge_quad_weights
    total = 0.0
    for f in mesh.conductor_faces(eta):
        k, j = int(mesh.face_elements[f, 0]), int(mesh.face_local[f, 0])
        length, n = _face_geometry(mesh, k, j)
        En = ref.face_basis[j] @ (sol.E[k] @ n)
        total += -sol.data.eps(k) * length * float(w @ En)
    return total


def boundary_flux(sol: Solution) -> float:
    """Outward numerical flux of eps E through the Dirichlet and Neumann
    boundary.  For the discrete solution

        boundary_flux - sum of conductor charges = integral of rho

    holds to solver precision (discrete Gauss law)."""
    mesh, ref, data = sol.mesh, sol.ref, sol.data
    w = ref.edge_quad_weights
    total = 0.0
    for f in mesh.boundary_faces:
        kind = mesh.face_kind[f]
        if kind == TagKind.FLOATING:
            continue
        k, j = int(mesh.face_elements[f, 0]), int(mesh.face_local[f, 0])
        length, n = _face_geometry(mesh, k, j)
        xy = _face_quadrature_xy(mesh, k, j, ref)
        marker = int(mesh.face_marker[f])
        L = ref.face_basis[j]
        if kind == TagKind.NEUMANN:
            flux = _evaluate(data.neumann[marker], xy[:, 0], xy[:, 1])
        else:
            gD = _evaluate(data.dirichlet[marker], xy[:, 0], xy[:, 1])
            flux = (data.eps(k) * (L @ (sol.E[k] @ n))
                    + sol.tau[k] * (L @ sol.phi[k] - gD))
        total += length * float(w @ flux)
    return total


def source_integral(sol: Solution) -> float:
    mesh, ref = sol.mesh, sol.ref
    v0, J, detJ = element_geometry(mesh)
    X = v0[:, None, :] + np.einsum("qj,kij->kqi", ref.quad_points, J)
    rho = _evaluate(sol.data.source, X[..., 0], X[..., 1])
    return float(np.sum(detJ[:, None] * rho * ref.quad_weights[None, :]))


@dataclass(frozen=True)
class TransmissionResidual:
    weak: np.ndarray        # (N_f,) max |<psi, flux jump>| per interior face
    pointwise: np.ndarray   # (N_f,) max |n+.eps E+ + n-.eps E-| at quadrature points

    @property
    def max_weak(self) -> float:
        return float(self.weak.max()) if self.weak.size else 0.0

    @property
    def max_pointwise(self) -> float:
        return float(self.pointwise.max()) if self.pointwise.size else 0.0


def transmission_residual(sol: Solution) -> TransmissionResidual:
    """Normal-flux continuity on interior faces.

    The weak residual tests the jump of the numerical flux
    ``n . eps E + tau (phi - trace)`` against the trace basis; it equals the
    trace-row residual of the global system.  The pointwise value is the
    jump of ``n . eps E`` itself, which vanishes only for exact solutions.
    """
    mesh, ref = sol.mesh, sol.ref
    Nfp = ref.n_face_nodes
    w = ref.edge_quad_weights
    interior = mesh.interior_faces
    weak = np.zeros(interior.size)
    pointwise = np.zeros(interior.size)
    for i, f in enumerate(interior):
        acc_weak = np.zeros(Nfp)
        acc_point = np.zeros(w.size)
        start = sol.dofmap.face_dof_start[f]
        for side in range(2):
            k, j = int(mesh.face_elements[f, side]), int(mesh.face_local[f, side])
            length, n = _face_geometry(mesh, k, j)
            L = ref.face_basis[j]
            cols = sol.dofmap.element_dofs[k][j * Nfp:(j + 1) * Nfp]
            lam_local = sol.trace[cols]
            En = sol.data.eps(k) * (L @ (sol.E[k] @ n))
            flux = En + sol.tau[k] * (L @ sol.phi[k] - ref.trace_basis @ lam_local)
            # test functions in the element's local node order, mapped to global
            contrib = length * (ref.trace_basis.T @ (w * flux))
            acc_weak[cols - start] += contrib
            # quadrature points run in opposite directions on the two sides
            acc_point += En if side == 0 else En[::-1]
        weak[i] = np.abs(acc_weak).max()
        pointwise[i] = np.abs(acc_point).max()
    return TransmissionResidual(weak, pointwise)


def equipotential_deviation(sol: Solution, eta: int) -> float:
    """max |phi_k - conductor potential| over the nodes and face quadrature
    points of conductor `eta`'s faces."""
    _conductor_index(sol, eta)
    mesh, ref = sol.mesh, sol.ref
    target = sol.conductor_potentials[eta - 1]
    dev = 0.0
    for f in mesh.conductor_faces(eta):
        k, j = int(mesh.face_elements[f, 0]), int(mesh.face_local[f, 0])
        at_nodes = sol.phi[k][ref.face_node_map[j]]
        at_quad = ref.face_basis[j] @ sol.phi[k]
        dev = max(dev, float(np.abs(at_nodes - target).max()),
                  float(np.abs(at_quad - target).max()))
    return dev


# ---------------------------------------------------------------------------
# Evaluation


def element_geometry(mesh: Mesh2D):
    """v0 (K, 2), J (K, 2, 2) and det J (K,) of all affine element maps."""
    v = mesh.vertices[mesh.elements]
    v0 = v[:, 0]
    J = np.stack([v[:, 1] - v0, v[:, 2] - v0], axis=-1)
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    return v0, J, detJ


def node_coordinates(sol: Solution) -> np.ndarray:
    """Physical coordinates of every element's nodes, shape (K, Np, 2)."""
    v0, J, _ = element_geometry(sol.mesh)
    return v0[:, None, :] + np.einsum("nj,kij->kni", sol.ref.nodes, J)


def l2_error(sol: Solution, phi_exact, E_exact=None):
    """L2 errors of phi and E against callables ``phi(x, y)`` and
    ``E(x, y) -> (Ex, Ey)``.  The E error is None when no E is given."""
    ref = sol.ref
    v0, J, detJ = element_geometry(sol.mesh)
    X = v0[:, None, :] + np.einsum("qj,kij->kqi", ref.quad_points, J)
    x, y = X[..., 0], X[..., 1]
    wq = detJ[:, None] * ref.quad_weights[None, :]
    phi_h = sol.phi @ ref.quad_basis.T
    err_phi = float(np.sqrt(np.sum(wq * (phi_h - _evaluate(phi_exact, x, y)) ** 2)))
    if E_exact is None:
        return err_phi, None
    Ex_ex, Ey_ex = E_exact(x, y)
    Ex_h = sol.E[:, :, 0] @ ref.quad_basis.T
    Ey_h = sol.E[:, :, 1] @ ref.quad_basis.T
    err_E = float(np.sqrt(np.sum(wq * ((Ex_h - Ex_ex) ** 2 + (Ey_h - Ey_ex) ** 2))))
    return err_phi, err_E


def locate_points(mesh: Mesh2D, points, tol: float = 1e-12):
    """Containing element and reference coordinates of each point.

    Points outside the mesh get element -1.  A point on a shared edge is
    assigned to the lowest-indexed element that contains it.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    v = mesh.vertices[mesh.elements]
    lo, hi = v.min(axis=1), v.max(axis=1)
    v0, J, detJ = element_geometry(mesh)
    Jinv = np.linalg.inv(J)
    scale = max(float(np.abs(mesh.vertices).max()), 1e-300)
    elem = -np.ones(len(pts), dtype=np.int64)
    ref_xy = np.full((len(pts), 2), np.nan)
    for i, p in enumerate(pts):
        slack = tol * scale
        cand = np.flatnonzero(np.all(p >= lo - slack, axis=1) & np.all(p <= hi + slack, axis=1))
        for k in cand:
            r = Jinv[k] @ (p - v0[k])
            if min(r[0], r[1], 1.0 - r[0] - r[1]) >= -1e-10:
                elem[i] = k
                ref_xy[i] = np.clip(r, 0.0, 1.0)
                break
    return elem, ref_xy


@dataclass(frozen=True)
class LineSample:
    s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    Ex: np.ndarray
    Ey: np.ndarray
    inside: np.ndarray
    element: np.ndarray


def evaluate_points(sol: Solution, points):
    """phi, Ex, Ey and element index at arbitrary points (NaN outside)."""
    elem, rxy = locate_points(sol.mesh, points)
    n = elem.size
    phi = np.full(n, np.nan)
    Ex = np.full(n, np.nan)
    Ey = np.full(n, np.nan)
    for i in np.flatnonzero(elem >= 0):
        k = elem[i]
        L = evaluate_basis(sol.ref, rxy[i])[0]
        phi[i] = L @ sol.phi[k]
        Ex[i], Ey[i] = L @ sol.E[k]
    return phi, Ex, Ey, elem


def evaluate_line(sol: Solution, start, end, n_samples: int) -> LineSample:
    """Sample the solution at `n_samples` equispaced points from `start` to
    `end`.  Samples in holes or outside the mesh are flagged, not failed."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    a, b = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, n_samples)
    pts = a[None, :] + t[:, None] * (b - a)[None, :]
    phi, Ex, Ey, elem = evaluate_points(sol, pts)
    s = t * float(np.linalg.norm(b - a))
    return LineSample(s, pts[:, 0], pts[:, 1], phi, Ex, Ey, elem >= 0, elem)


def write_line_csv(sample: LineSample, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["s", "x", "y", "phi", "Ex", "Ey", "inside"])
        for row in zip(sample.s, sample.x, sample.y, sample.phi, sample.Ex, sample.Ey,
                       sample.inside):
            writer.writerow([f"{v:.17g}" for v in row[:6]] + [int(row[6])])
