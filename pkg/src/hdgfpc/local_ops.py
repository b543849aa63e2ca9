"""Element-level HDG blocks and static condensation.

Local unknowns are ordered ``[phi (Np), E_x (Np), E_y (Np)]``.  Trace columns
are ordered by local face, ``Nfp`` per face in counterclockwise traversal
order, followed by one column per conductor touched by the element.

The E equation is tested with ``eps_k * w`` so that the local matrix is
symmetric; all coupling blocks carry the matching factor.  Conductor charge is
the flux of ``eps E`` out of the conductor, i.e. along ``-n_k`` on conductor
faces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.linalg as sla

from .basis import ReferenceElement, face_points
from .mesh import Mesh2D, TagKind

Data = Union[float, Callable]


class LocalAssemblyError(RuntimeError):
    pass


def _evaluate(value: Data, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.broadcast_to(np.asarray(value(x, y), dtype=float), x.shape)
    return np.full(x.shape, float(value))


@dataclass
class ProblemData:
    """Coefficients and boundary data of the electrostatic problem.

    ``dirichlet`` and ``neumann`` map boundary marker ids to constants or
    callables ``f(x, y)``.  Neumann data is the prescribed normal flux
    ``n . (eps E)`` with n the outward normal of the domain.  ``charges[i]`` is
    the total charge per unit depth of conductor i + 1.
    """

    permittivity: Union[float, np.ndarray] = 1.0
    source: Data = 0.0
    dirichlet: Mapping[int, Data] = field(default_factory=dict)
    neumann: Mapping[int, Data] = field(default_factory=dict)
    charges: Sequence[float] = ()
    tau0: float = 1.0

    def eps(self, k: int) -> float:
        if np.ndim(self.permittivity) == 0:
            return float(self.permittivity)
        return float(self.permittivity[k])

    def validate(self, mesh: Mesh2D) -> None:
        eps = np.asarray(self.permittivity, dtype=float)
        if eps.ndim not in (0, 1) or (eps.ndim == 1 and eps.size != mesh.n_elements):
            raise ValueError("permittivity must be a scalar or one value per element")
        if np.any(eps <= 0):
            raise ValueError("permittivity must be positive")
        if not self.tau0 > 0:
            raise ValueError(f"tau0 must be positive, got {self.tau0}")
        if len(self.charges) != mesh.conductor_count:
            raise ValueError(f"{len(self.charges)} charges given for "
                             f"{mesh.conductor_count} conductors")
        for kind, table, name in ((TagKind.DIRICHLET, self.dirichlet, "Dirichlet"),
                                  (TagKind.NEUMANN, self.neumann, "Neumann")):
            needed = set(mesh.face_marker[mesh.face_kind == kind].tolist())
            missing = needed - set(table)
            if missing:
                raise ValueError(f"no {name} data for marker(s) {sorted(missing)}")


@dataclass
class LocalSystem:
    """Blocks of one element's local and global equations.

    ``A @ [phi; E] + A_bar @ [trace; conductors] = F`` is the local problem;
    ``A_tilde @ [phi; E] + A_hat @ [trace; conductors]`` are the element's
    contributions to the trace rows (transmission condition, sign flipped)
    and conductor rows (charge condition).
    """

    element: int
    tau: float
    eps: float
    A: np.ndarray
    A_bar: np.ndarray
    A_tilde: np.ndarray
    A_hat: np.ndarray
    F: np.ndarray
    conductors: tuple
    lu: tuple = field(repr=False)


def stabilization_tau(mesh: Mesh2D, k: int, tau0: float, eps: float = 1.0) -> float:
    """tau_k = tau0 * eps_k / h_k with h_k the shortest edge of element k."""
    if not tau0 > 0:
        raise ValueError(f"tau0 must be positive, got {tau0}")
    v = mesh.vertices[mesh.elements[k]]
    h = min(np.hypot(*(v[1] - v[0])), np.hypot(*(v[2] - v[1])), np.hypot(*(v[0] - v[2])))
    return tau0 * eps / h


def element_conductors(mesh: Mesh2D, k: int) -> tuple:
    faces = mesh.element_faces[k]
    ids = {int(mesh.face_marker[f]) for f in faces if mesh.face_kind[f] == TagKind.FLOATING}
    return tuple(sorted(ids))


def assemble_local(mesh: Mesh2D, ref: ReferenceElement, k: int,
                   data: ProblemData) -> LocalSystem:
    Np, Nfp = ref.n_nodes, ref.n_face_nodes
    eps = data.eps(k)
    tau = stabilization_tau(mesh, k, data.tau0, eps)
    J, detJ = mesh.jacobian(k)
    if detJ <= 0:
        raise LocalAssemblyError(f"element {k} has non-positive Jacobian {detJ}")
    Jinv = np.linalg.inv(J)
    v0 = mesh.vertices[mesh.elements[k, 0]]

    mass = detJ * ref.mass
    cx = detJ * (Jinv[0, 0] * ref.div_x + Jinv[1, 0] * ref.div_y)
    cy = detJ * (Jinv[0, 1] * ref.div_x + Jinv[1, 1] * ref.div_y)

    conductors = element_conductors(mesh, k)
    n_trace = 3 * Nfp + len(conductors)
    A = np.zeros((3 * Np, 3 * Np))
    A_bar = np.zeros((3 * Np, n_trace))
    A_tilde = np.zeros((n_trace, 3 * Np))
    A_hat = np.zeros((n_trace, n_trace))
    F = np.zeros(3 * Np)
    phi, ex, ey = slice(0, Np), slice(Np, 2 * Np), slice(2 * Np, 3 * Np)

    A_phiphi = np.zeros((Np, Np))
    A_phiE_x = eps * cx
    A_phiE_y = eps * cy
    A_Ephi_x = eps * cx.T
    A_Ephi_y = eps * cy.T

    w_e = ref.edge_quad_weights
    verts = mesh.vertices[mesh.elements[k]]
    for j in range(3):
        f = mesh.element_faces[k, j]
        kind = TagKind(int(mesh.face_kind[f]))
        marker = int(mesh.face_marker[f])
        a, b = (0, 1) if j == 0 else ((1, 2) if j == 1 else (2, 0))
        d = verts[b] - verts[a]
        length = float(np.hypot(d[0], d[1]))
        nx, ny = d[1] / length, -d[0] / length
        L = ref.face_basis[j]                              # (Nqe, Np)
        face_mass = length * (L.T @ (w_e[:, None] * L))    # <l_i, l_j>
        qx = v0[None, :] + face_points(j, ref.edge_quad_points) @ J.T

        if kind == TagKind.INTERIOR:
            G = length * (L.T @ (w_e[:, None] * ref.trace_basis))   # <l_i, psi_a>
            cols = slice(j * Nfp, (j + 1) * Nfp)
            A_phiphi += tau * face_mass
            A_bar[phi, cols] = -tau * G
            A_bar[ex, cols] = -eps * nx * G
            A_bar[ey, cols] = -eps * ny * G
            # transmission row, tested with the trace basis
            Gt = length * (ref.trace_basis.T @ (w_e[:, None] * L))
            A_tilde[cols, phi] = -tau * Gt
            A_tilde[cols, ex] = -eps * nx * Gt
            A_tilde[cols, ey] = -eps * ny * Gt
            A_hat[cols, cols] = tau * length * (
                ref.trace_basis.T @ (w_e[:, None] * ref.trace_basis))
        elif kind == TagKind.DIRICHLET:
            gD = _evaluate(data.dirichlet[marker], qx[:, 0], qx[:, 1])
            lg = length * (L.T @ (w_e * gD))
            A_phiphi += tau * face_mass
            F[phi] += tau * lg
            F[ex] += eps * nx * lg
            F[ey] += eps * ny * lg
        elif kind == TagKind.NEUMANN:
            gN = _evaluate(data.neumann[marker], qx[:, 0], qx[:, 1])
            F[phi] -= length * (L.T @ (w_e * gN))
            A_phiE_x = A_phiE_x - eps * nx * face_mass
            A_phiE_y = A_phiE_y - eps * ny * face_mass
            A_Ephi_x = A_Ephi_x - eps * nx * face_mass
            A_Ephi_y = A_Ephi_y - eps * ny * face_mass
        else:
            # conductor face: no stabilization, trace is the conductor scalar
            c = 3 * Nfp + conductors.index(marker)
            ones = length * (L.T @ w_e)                     # <l_i, 1>
            A_bar[ex, c] += -eps * nx * ones
            A_bar[ey, c] += -eps * ny * ones
            A_tilde[c, ex] += -eps * nx * ones
            A_tilde[c, ey] += -eps * ny * ones

    A[phi, phi] = A_phiphi
    A[phi, ex] = A_phiE_x
    A[phi, ey] = A_phiE_y
    A[ex, phi] = A_Ephi_x
    A[ey, phi] = A_Ephi_y
    A[ex, ex] = -eps * mass
    A[ey, ey] = -eps * mass

    qv = v0[None, :] + ref.quad_points @ J.T
    rho = _evaluate(data.source, qv[:, 0], qv[:, 1])
    F[phi] += detJ * (ref.quad_basis.T @ (ref.quad_weights * rho))

    lu = sla.lu_factor(A, check_finite=False)
    pivots = np.abs(np.diag(lu[0]))
    if pivots.min() <= 1e-13 * pivots.max():
        raise LocalAssemblyError(f"local matrix of element {k} is singular")
    return LocalSystem(k, tau, eps, A, A_bar, A_tilde, A_hat, F, conductors, lu)


def condense(local: LocalSystem):
    """Schur complement S_k = A_hat - A_tilde A^-1 A_bar and g_k = A_tilde A^-1 F."""
    sol = sla.lu_solve(local.lu, np.column_stack([local.A_bar, local.F]),
                       check_finite=False)
    S = local.A_hat - local.A_tilde @ sol[:, :-1]
    g = local.A_tilde @ sol[:, -1]
    return S, g


def local_solve(local: LocalSystem, trace_values: np.ndarray) -> np.ndarray:
    """Back-substitution [phi; E] = A^-1 (F - A_bar lambda)."""
    return sla.lu_solve(local.lu, local.F - local.A_bar @ trace_values, check_finite=False)
