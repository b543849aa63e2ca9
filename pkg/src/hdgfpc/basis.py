"""Reference-element machinery for nodal triangles.

The reference triangle is the unit triangle with vertices (0, 0), (1, 0),
(0, 1).  Local faces are numbered by their vertex pairs::

    face 0: v0 -> v1   (y = 0)
    face 1: v1 -> v2   (x + y = 1)
    face 2: v2 -> v0   (x = 0)

Each face is traversed counterclockwise, and the nodes on a face are listed
in that traversal order.  Nodal operators are built from an orthonormal
(Dubiner) modal basis through the generalized Vandermonde matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, sqrt

import numpy as np
from scipy.special import eval_jacobi, roots_jacobi, roots_legendre

MIN_ORDER = 1
MAX_ORDER = 6

FACE_VERTICES = ((0, 1), (1, 2), (2, 0))
_REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])

# Optimized blending parameters for warp & blend nodes, indexed by order - 1.
_ALPHA_OPT = (0.0, 0.0, 1.4152, 0.1001, 0.2751, 0.9800, 1.0999, 1.2832,
              1.3648, 1.4773, 1.4959, 1.5743, 1.5770, 1.6223, 1.6258)


class BasisError(ValueError):
    pass


def num_nodes(p: int) -> int:
    return (p + 1) * (p + 2) // 2


# ---------------------------------------------------------------------------
# 1D polynomials


def jacobi_normalized(x, alpha, beta, n):
    """Jacobi polynomial P_n^(alpha, beta), normalized to unit L2 norm
    with respect to the weight (1-x)^alpha (1+x)^beta on [-1, 1]."""
    x = np.asarray(x, dtype=float)
    norm2 = (2.0 ** (alpha + beta + 1) / (2 * n + alpha + beta + 1)
             * gamma(n + alpha + 1) * gamma(n + beta + 1)
             / (gamma(n + alpha + beta + 1) * gamma(n + 1)))
    return eval_jacobi(n, alpha, beta, x) / sqrt(norm2)


def grad_jacobi_normalized(x, alpha, beta, n):
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.zeros_like(x)
    return sqrt(n * (n + alpha + beta + 1)) * jacobi_normalized(
        x, alpha + 1, beta + 1, n - 1)


def gauss_lobatto(n_points: int) -> np.ndarray:
    """Legendre-Gauss-Lobatto points on [-1, 1]."""
    if n_points == 2:
        return np.array([-1.0, 1.0])
    interior, _ = roots_jacobi(n_points - 2, 1.0, 1.0)
    return np.concatenate(([-1.0], np.sort(interior), [1.0]))


def lagrange_1d(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Values of the 1D Lagrange polynomials on `nodes` at `x`, shape
    (len(x), len(nodes))."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.ones((x.size, nodes.size))
    for j, xj in enumerate(nodes):
        for m, xm in enumerate(nodes):
            if m != j:
                out[:, j] *= (x - xm) / (xj - xm)
    return out


# ---------------------------------------------------------------------------
# Orthonormal triangle basis on the biunit triangle (-1,-1), (1,-1), (-1,1)


def _collapse(r, s):
    a = np.where(np.abs(1.0 - s) > 1e-14,
                 2.0 * (1.0 + r) / np.where(np.abs(1.0 - s) > 1e-14, 1.0 - s, 1.0) - 1.0,
                 -1.0)
    return a, s


def _modal_indices(p):
    return [(i, j) for i in range(p + 1) for j in range(p + 1 - i)]


def _modal_values(p, r, s):
    a, b = _collapse(r, s)
    cols = []
    for i, j in _modal_indices(p):
        h1 = jacobi_normalized(a, 0, 0, i)
        h2 = jacobi_normalized(b, 2 * i + 1, 0, j)
        cols.append(sqrt(2.0) * h1 * h2 * (1.0 - b) ** i)
    return np.column_stack(cols)


def _modal_gradients(p, r, s):
    """Gradients of the modal basis with respect to (r, s)."""
    a, b = _collapse(r, s)
    dr_cols, ds_cols = [], []
    for i, j in _modal_indices(p):
        fa = jacobi_normalized(a, 0, 0, i)
        dfa = grad_jacobi_normalized(a, 0, 0, i)
        gb = jacobi_normalized(b, 2 * i + 1, 0, j)
        dgb = grad_jacobi_normalized(b, 2 * i + 1, 0, j)

        dmr = dfa * gb
        if i > 0:
            dmr = dmr * (0.5 * (1.0 - b)) ** (i - 1)
        dms = dfa * (gb * (0.5 * (1.0 + a)))
        if i > 0:
            dms = dms * (0.5 * (1.0 - b)) ** (i - 1)
        tmp = dgb * (0.5 * (1.0 - b)) ** i
        if i > 0:
            tmp = tmp - 0.5 * i * gb * (0.5 * (1.0 - b)) ** (i - 1)
        dms = dms + fa * tmp
        scale = 2.0 ** (i + 0.5)
        dr_cols.append(dmr * scale)
        ds_cols.append(dms * scale)
    return np.column_stack(dr_cols), np.column_stack(ds_cols)


# ---------------------------------------------------------------------------
# Node sets


def _lattice(p):
    """Equidistant lattice in the unit triangle, row by row in y."""
    pts = [(i / p, j / p) for j in range(p + 1) for i in range(p + 1 - j)]
    return np.array(pts)


def _warp_factor(p, rout):
    lgl = gauss_lobatto(p + 1)
    req = np.linspace(-1.0, 1.0, p + 1)
    veq = np.column_stack([jacobi_normalized(req, 0, 0, n) for n in range(p + 1)])
    pmat = np.column_stack([jacobi_normalized(rout, 0, 0, n) for n in range(p + 1)])
    warp = pmat @ np.linalg.solve(veq, lgl - req)
    interior = np.abs(rout) < 1.0 - 1e-10
    sf = 1.0 - (interior * rout) ** 2
    return warp / sf + warp * (interior - 1.0)


def _warp_blend_nodes(p):
    """Warp & blend nodes, returned in unit-triangle coordinates with the
    same ordering as `_lattice`."""
    alpha = _ALPHA_OPT[p - 1] if p < 16 else 5.0 / 3.0
    lat = _lattice(p)
    # barycentric: L2 at v0, L3 at v1, L1 at v2
    l1 = lat[:, 1]
    l3 = lat[:, 0]
    l2 = 1.0 - l1 - l3
    x = -l2 + l3
    y = (-l2 - l3 + 2.0 * l1) / sqrt(3.0)

    blend1 = 4.0 * l2 * l3
    blend2 = 4.0 * l1 * l3
    blend3 = 4.0 * l1 * l2
    warp1 = blend1 * _warp_factor(p, l3 - l2) * (1.0 + (alpha * l1) ** 2)
    warp2 = blend2 * _warp_factor(p, l1 - l3) * (1.0 + (alpha * l2) ** 2)
    warp3 = blend3 * _warp_factor(p, l2 - l1) * (1.0 + (alpha * l3) ** 2)
    x = x + warp1 + np.cos(2 * np.pi / 3) * warp2 + np.cos(4 * np.pi / 3) * warp3
    y = y + np.sin(2 * np.pi / 3) * warp2 + np.sin(4 * np.pi / 3) * warp3

    # equilateral -> biunit -> unit
    b1 = (sqrt(3.0) * y + 1.0) / 3.0
    b2 = (-3.0 * x - sqrt(3.0) * y + 2.0) / 6.0
    b3 = (3.0 * x - sqrt(3.0) * y + 2.0) / 6.0
    r = -b2 + b3 - b1
    s = -b2 - b3 + b1
    nodes = np.column_stack([(1.0 + r) / 2.0, (1.0 + s) / 2.0])
    # snap round-off on the edges so face maps are exact
    nodes[np.abs(nodes) < 1e-14] = 0.0
    on_hyp = np.abs(nodes.sum(axis=1) - 1.0) < 1e-14
    nodes[on_hyp, 1] = 1.0 - nodes[on_hyp, 0]
    return nodes


def reference_nodes(p: int) -> np.ndarray:
    """Volume nodes of order p: equidistant up to p = 3, warp & blend above."""
    if p <= 3:
        return _lattice(p)
    return _warp_blend_nodes(p)


# ---------------------------------------------------------------------------
# Quadrature


def triangle_quadrature(n: int):
    """Collapsed Gauss rule on the unit triangle with n x n points.

    Exact for polynomials of total degree 2n - 1.
    """
    xa, wa = roots_legendre(n)
    xb, wb = roots_jacobi(n, 1.0, 0.0)
    A, B = np.meshgrid(xa, xb, indexing="ij")
    WA, WB = np.meshgrid(wa, wb, indexing="ij")
    r = 0.5 * (1.0 + A) * (1.0 - B) - 1.0
    s = B
    pts = np.column_stack([(1.0 + r.ravel()) / 2.0, (1.0 + s.ravel()) / 2.0])
    # biunit weight is 0.5*wa*wb; unit triangle has a quarter of the area
    w = 0.125 * (WA * WB).ravel()
    return pts, w


def edge_quadrature(n: int):
    """Gauss-Legendre rule on [0, 1], exact to degree 2n - 1."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def face_points(face: int, t: np.ndarray) -> np.ndarray:
    """Map the face parameter t in [0, 1] onto reference face `face`."""
    a, b = FACE_VERTICES[face]
    va, vb = _REF_VERTICES[a], _REF_VERTICES[b]
    t = np.asarray(t, dtype=float)
    return va[None, :] + t[:, None] * (vb - va)[None, :]


def _face_parameter(face, pts):
    if face == 0:
        return pts[:, 0]
    if face == 1:
        return pts[:, 1]
    return 1.0 - pts[:, 1]


def _on_face(face, pts, tol=1e-12):
    x, y = pts[:, 0], pts[:, 1]
    if face == 0:
        return np.abs(y) < tol
    if face == 1:
        return np.abs(x + y - 1.0) < tol
    return np.abs(x) < tol


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ReferenceElement:
    """Order-p nodal Lagrange element on the unit triangle.

    All arrays are read-only once built; one instance is shared by every
    element of a mesh.
    """

    order: int
    nodes: np.ndarray              # (Np, 2)
    edge_nodes: np.ndarray         # (Nfp,) face parameters in [0, 1]
    vandermonde: np.ndarray        # (Np, Np) modal values at nodes
    grad_vandermonde: tuple        # (Vx, Vy), each (Np, Np)
    vandermonde_cond: float
    quad_points: np.ndarray        # (Nq, 2)
    quad_weights: np.ndarray       # (Nq,)
    quad_degree: int
    edge_quad_points: np.ndarray   # (Nqe,) in [0, 1]
    edge_quad_weights: np.ndarray  # (Nqe,)
    edge_quad_degree: int
    face_node_map: np.ndarray      # (3, Nfp) volume-node indices per face
    _inv_vandermonde: np.ndarray = field(repr=False)

    # Precomputed reference operators used by the local assembly.
    mass: np.ndarray = field(repr=False)          # (Np, Np)  int l_i l_j
    div_x: np.ndarray = field(repr=False)         # (Np, Np)  int l_i d_x l_j
    div_y: np.ndarray = field(repr=False)         # (Np, Np)  int l_i d_y l_j
    quad_basis: np.ndarray = field(repr=False)    # (Nq, Np)
    face_basis: np.ndarray = field(repr=False)    # (3, Nqe, Np) volume basis on faces
    trace_basis: np.ndarray = field(repr=False)   # (Nqe, Nfp) edge Lagrange basis

    n_faces: int = 3

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_face_nodes(self) -> int:
        return self.edge_nodes.size


def build_reference_element(p: int) -> ReferenceElement:
    if not isinstance(p, (int, np.integer)) or not MIN_ORDER <= p <= MAX_ORDER:
        raise BasisError(f"polynomial order must be in [{MIN_ORDER}, {MAX_ORDER}], got {p!r}")
    p = int(p)
    nodes = reference_nodes(p)
    r, s = 2.0 * nodes[:, 0] - 1.0, 2.0 * nodes[:, 1] - 1.0
    V = _modal_values(p, r, s)
    Vr, Vs = _modal_gradients(p, r, s)
    # chain rule biunit -> unit: d/dx = 2 d/dr
    Vx, Vy = 2.0 * Vr, 2.0 * Vs
    Vinv = np.linalg.inv(V)

    face_map = []
    for f in range(3):
        idx = np.flatnonzero(_on_face(f, nodes))
        t = _face_parameter(f, nodes[idx])
        face_map.append(idx[np.argsort(t)])
    face_map = np.array(face_map)
    edge_nodes = nodes[face_map[0], 0].copy()
    for f in (1, 2):
        t = _face_parameter(f, nodes[face_map[f]])
        if not np.allclose(t, edge_nodes, atol=1e-13):
            raise BasisError(f"face {f} nodes are inconsistent with face 0")

    n_quad = p + 2
    qp, qw = triangle_quadrature(n_quad)
    eqp, eqw = edge_quadrature(n_quad)

    def _basis_at(pts):
        return _modal_values(p, 2.0 * pts[:, 0] - 1.0, 2.0 * pts[:, 1] - 1.0) @ Vinv

    def _grad_at(pts):
        gr, gs = _modal_gradients(p, 2.0 * pts[:, 0] - 1.0, 2.0 * pts[:, 1] - 1.0)
        return 2.0 * gr @ Vinv, 2.0 * gs @ Vinv

    Lq = _basis_at(qp)
    Gx, Gy = _grad_at(qp)
    mass = Lq.T @ (qw[:, None] * Lq)
    div_x = Lq.T @ (qw[:, None] * Gx)
    div_y = Lq.T @ (qw[:, None] * Gy)
    face_basis = np.stack([_basis_at(face_points(f, eqp)) for f in range(3)])
    trace_basis = lagrange_1d(edge_nodes, eqp)

    for arr in (nodes, V, Vx, Vy, Vinv, qp, qw, eqp, eqw, face_map, edge_nodes,
                mass, div_x, div_y, Lq, face_basis, trace_basis):
        arr.setflags(write=False)

    return ReferenceElement(
        order=p,
        nodes=nodes,
        edge_nodes=edge_nodes,
        vandermonde=V,
        grad_vandermonde=(Vx, Vy),
        vandermonde_cond=float(np.linalg.cond(V)),
        quad_points=qp,
        quad_weights=qw,
        quad_degree=2 * n_quad - 1,
        edge_quad_points=eqp,
        edge_quad_weights=eqw,
        edge_quad_degree=2 * n_quad - 1,
        face_node_map=face_map,
        _inv_vandermonde=Vinv,
        mass=mass,
        div_x=div_x,
        div_y=div_y,
        quad_basis=Lq,
        face_basis=face_basis,
        trace_basis=trace_basis,
    )


def _check_inside(points, tol=1e-10):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    bary_min = np.minimum(np.minimum(points[:, 0], points[:, 1]),
                          1.0 - points[:, 0] - points[:, 1])
    if np.any(bary_min < -tol):
        bad = int(np.argmin(bary_min))
        raise BasisError(f"point {points[bad].tolist()} lies outside the reference triangle")
    return points


def evaluate_basis(ref: ReferenceElement, points) -> np.ndarray:
    """Lagrange basis values, shape (n_points, Np)."""
    pts = _check_inside(points)
    modal = _modal_values(ref.order, 2.0 * pts[:, 0] - 1.0, 2.0 * pts[:, 1] - 1.0)
    return modal @ ref._inv_vandermonde


def evaluate_basis_gradients(ref: ReferenceElement, points) -> np.ndarray:
    """Reference gradients of the Lagrange basis, shape (n_points, Np, 2)."""
    pts = _check_inside(points)
    gr, gs = _modal_gradients(ref.order, 2.0 * pts[:, 0] - 1.0, 2.0 * pts[:, 1] - 1.0)
    return np.stack([2.0 * gr @ ref._inv_vandermonde,
                     2.0 * gs @ ref._inv_vandermonde], axis=-1)


def subtriangles(p: int) -> np.ndarray:
    """Linear sub-triangulation of the nodal lattice, used for output."""
    index = {}
    n = 0
    for j in range(p + 1):
        for i in range(p + 1 - j):
            index[i, j] = n
            n += 1
    tris = []
    for j in range(p):
        for i in range(p - j):
            tris.append((index[i, j], index[i + 1, j], index[i, j + 1]))
            if i + j < p - 1:
                tris.append((index[i + 1, j], index[i + 1, j + 1], index[i, j + 1]))
    return np.array(tris, dtype=int)
