"""Global trace numbering and assembly of the condensed system."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .basis import FACE_VERTICES, ReferenceElement, build_reference_element
from .local_ops import ProblemData, element_conductors
from .mesh import Mesh2D


class AssemblyError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TraceDofMap:
    """Numbering of the global unknowns.

    Interior faces get contiguous blocks of ``n_face_nodes`` DOFs in mesh face
    order; conductor potentials follow, one scalar each.  ``element_dofs[k]``
    gathers the element's trace columns (see :mod:`hdgfpc.local_ops`) into
    global indices, with -1 for columns on Dirichlet/Neumann faces.
    """

    n_face_nodes: int
    face_dof_start: np.ndarray      # (F,), -1 for boundary faces
    conductor_dofs: np.ndarray      # (M,)
    element_dofs: tuple             # K arrays
    element_conductors: tuple       # K tuples of conductor ids
    n_dof: int

    @property
    def n_trace_dofs(self) -> int:
        return self.n_dof - self.conductor_dofs.size

    def face_dofs(self, f: int) -> np.ndarray:
        start = self.face_dof_start[f]
        if start < 0:
            raise KeyError(f"face {f} carries no trace unknowns")
        return np.arange(start, start + self.n_face_nodes)


def _face_node_coords(mesh, k, j, ref):
    v = mesh.vertices[mesh.elements[k]]
    a, b = FACE_VERTICES[j]
    t = ref.edge_nodes
    return v[a][None, :] * (1.0 - t)[:, None] + v[b][None, :] * t[:, None]


def build_dof_map(mesh: Mesh2D, ref) -> TraceDofMap:
    """Number the trace unknowns of `mesh` for a reference element or order."""
    if not isinstance(ref, ReferenceElement):
        ref = build_reference_element(ref)
    Nfp = ref.n_face_nodes
    interior = mesh.interior_faces
    face_start = -np.ones(mesh.n_faces, dtype=np.int64)
    face_start[interior] = np.arange(interior.size) * Nfp
    n_trace = interior.size * Nfp
    conductor_dofs = n_trace + np.arange(mesh.conductor_count)

    lengths = mesh.edge_lengths()
    scale = float(np.abs(mesh.vertices).max())
    element_dofs, element_conds = [], []
    for k in range(mesh.n_elements):
        conds = element_conductors(mesh, k)
        dofs = -np.ones(3 * Nfp + len(conds), dtype=np.int64)
        for j in range(3):
            f = mesh.element_faces[k, j]
            if face_start[f] < 0:
                continue
            # global order runs along face_vertices[f]; reconcile by position
            va, vb = mesh.vertices[mesh.face_vertices[f]]
            t = ref.edge_nodes
            global_pts = va[None, :] * (1.0 - t)[:, None] + vb[None, :] * t[:, None]
            local_pts = _face_node_coords(mesh, k, j, ref)
            dist = np.linalg.norm(local_pts[:, None, :] - global_pts[None, :, :], axis=2)
            match = dist.argmin(axis=1)
            tol = 1e-12 * lengths[k, j] + 8 * np.finfo(float).eps * scale
            if (dist[np.arange(Nfp), match].max() > tol
                    or np.unique(match).size != Nfp):
                raise AssemblyError(f"trace nodes of face {f} do not match from element {k}")
            dofs[j * Nfp:(j + 1) * Nfp] = face_start[f] + match
        for c, eta in enumerate(conds):
            dofs[3 * Nfp + c] = conductor_dofs[eta - 1]
        dofs.setflags(write=False)
        element_dofs.append(dofs)
        element_conds.append(conds)

    face_start.setflags(write=False)
    conductor_dofs.setflags(write=False)
    return TraceDofMap(Nfp, face_start, conductor_dofs, tuple(element_dofs),
                       tuple(element_conds), n_trace + mesh.conductor_count)


@dataclass(frozen=True, eq=False)
class GlobalTraceSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_dof: int
    n_conductors: int

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def symmetry_error(self) -> float:
        """max |A - A^T| / max |A|."""
        diff = abs(self.matrix - self.matrix.T)
        amax = abs(self.matrix).max()
        return float(diff.max() / amax) if amax > 0 else 0.0


def assemble_global(condensed, dofmap: TraceDofMap, data: ProblemData) -> GlobalTraceSystem:
    """Scatter element Schur complements into the global trace system.

    `condensed` is a sequence of ``(S_k, g_k)`` in element order.  The right
    hand side is ``-sum g_k`` plus the prescribed charge on conductor rows.
    """
    n = dofmap.n_dof
    M = dofmap.conductor_dofs.size
    charges = np.asarray(data.charges, dtype=float)
    if charges.size != M:
        raise AssemblyError(f"{charges.size} charges given for {M} conductors")
    if len(condensed) != len(dofmap.element_dofs):
        raise AssemblyError("one condensed block per element is required")

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    for (S, g), dofs in zip(condensed, dofmap.element_dofs):
        if S.shape != (dofs.size, dofs.size):
            raise AssemblyError("condensed block does not match the element DOF map")
        active = np.flatnonzero(dofs >= 0)
        gdofs = dofs[active]
        if gdofs.size and gdofs.max() >= n:
            raise AssemblyError("global DOF index out of range")
        rows.append(np.repeat(gdofs, gdofs.size))
        cols.append(np.tile(gdofs, gdofs.size))
        vals.append(S[np.ix_(active, active)].ravel())
        np.add.at(rhs, gdofs, -g[active])
    rhs[dofmap.conductor_dofs] += charges

    if rows:
        rows, cols, vals = (np.concatenate(x) for x in (rows, cols, vals))
    matrix = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return GlobalTraceSystem(matrix, rhs, n, M)


def dump_matrix(system: GlobalTraceSystem, path) -> None:
    """ASCII coordinate dump: header ``N_dof nnz`` then ``row col value``."""
    coo = system.matrix.tocoo()
    with open(Path(path), "w") as fh:
        fh.write(f"{system.n_dof} {coo.nnz}\n")
        for r, c, v in zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()):
            fh.write(f"{r} {c} {v!r}\n")


def load_matrix_dump(path) -> sp.csr_matrix:
    with open(Path(path)) as fh:
        n, nnz = (int(t) for t in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ValueError(f"expected {nnz} entries, found {data.shape[0]}")
    return sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=(n, n))


def dg_unknown_count(mesh: Mesh2D, ref: ReferenceElement, dim: int = 2) -> int:
    """Unknowns of a full DG discretization of the first-order system:
    K * Np * (1 + d)."""
    return mesh.n_elements * ref.n_nodes * (1 + dim)


def expected_dof_count(mesh: Mesh2D, ref: ReferenceElement) -> int:
    return mesh.n_interior_faces * ref.n_face_nodes + mesh.conductor_count

