"""Legacy ASCII VTK output of discontinuous element fields."""

from __future__ import annotations

import numpy as np

from .basis import subtriangles
from .recovery import Solution, node_coordinates

VTK_TRIANGLE = 5


def write_vtk(sol: Solution, path, title: str = "hdgfpc solution") -> None:
    """Write `sol` as an unstructured grid.

    Every element writes its own nodes, so the field stays discontinuous
    across faces.  Each element is split into the linear sub-triangles of its
    node lattice.
    """
    xy = node_coordinates(sol).reshape(-1, 2)
    K, Np = sol.phi.shape
    sub = subtriangles(sol.ref.order)
    # sub-triangles index lattice order, which is the node order for p <= 3
    # and for warp & blend nodes alike
    cells = (sub[None, :, :] + Np * np.arange(K)[:, None, None]).reshape(-1, 3)
    owner = np.repeat(np.arange(K), sub.shape[0])
    phi = sol.phi.reshape(-1)
    E = sol.E.reshape(-1, 2)

    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {xy.shape[0]} double\n")
        np.savetxt(fh, np.column_stack([xy, np.zeros(len(xy))]), fmt="%.17g")
        fh.write(f"CELLS {len(cells)} {4 * len(cells)}\n")
        np.savetxt(fh, np.column_stack([np.full(len(cells), 3), cells]), fmt="%d")
        fh.write(f"CELL_TYPES {len(cells)}\n")
        np.savetxt(fh, np.full(len(cells), VTK_TRIANGLE), fmt="%d")
        fh.write(f"CELL_DATA {len(cells)}\nSCALARS element int 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, owner, fmt="%d")
        fh.write(f"POINT_DATA {xy.shape[0]}\nSCALARS phi double 1\nLOOKUP_TABLE default\n")
        np.savetxt(fh, phi, fmt="%.17g")
        fh.write("VECTORS E double\n")
        np.savetxt(fh, np.column_stack([E, np.zeros(len(E))]), fmt="%.17g")
