"""Triangle meshes with tagged boundaries and an explicit face skeleton.

Conductor (floating-potential) regions are holes in the mesh: their surfaces
are ordinary boundary faces carrying a ``Floating`` tag.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .basis import FACE_VERTICES


class MeshError(ValueError):
    pass


class TagKind(enum.IntEnum):
    INTERIOR = 0
    DIRICHLET = 1
    NEUMANN = 2
    FLOATING = 3


@dataclass(frozen=True)
class BoundaryTag:
    kind: TagKind
    id: int = 0

    @classmethod
    def dirichlet(cls, marker: int = 0) -> "BoundaryTag":
        return cls(TagKind.DIRICHLET, marker)

    @classmethod
    def neumann(cls, marker: int = 0) -> "BoundaryTag":
        return cls(TagKind.NEUMANN, marker)

    @classmethod
    def floating(cls, conductor: int) -> "BoundaryTag":
        return cls(TagKind.FLOATING, conductor)


INTERIOR = BoundaryTag(TagKind.INTERIOR, 0)

_FILE_TAGS = {TagKind.DIRICHLET: "D", TagKind.NEUMANN: "N", TagKind.FLOATING: "C"}
_FILE_KINDS = {v: k for k, v in _FILE_TAGS.items()}


@dataclass(frozen=True, eq=False)
class Mesh2D:
    """Immutable 2D triangle mesh.

    Faces are stored once.  For a boundary face ``face_vertices`` follows the
    counterclockwise traversal of its single element; for an interior face it
    follows the traversal of ``face_elements[f, 0]``.  Unused adjacency slots
    hold -1.
    """

    vertices: np.ndarray        # (Nv, 2) float
    elements: np.ndarray        # (K, 3) int, counterclockwise
    face_vertices: np.ndarray   # (F, 2)
    face_elements: np.ndarray   # (F, 2)
    face_local: np.ndarray      # (F, 2) local face index in each adjacent element
    face_kind: np.ndarray       # (F,) TagKind values
    face_marker: np.ndarray     # (F,) marker id or conductor index
    element_faces: np.ndarray   # (K, 3)
    conductor_count: int

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_vertices.shape[0]

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_kind == TagKind.INTERIOR)

    @property
    def n_interior_faces(self) -> int:
        return int(np.count_nonzero(self.face_kind == TagKind.INTERIOR))

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_kind != TagKind.INTERIOR)

    def tag(self, face: int) -> BoundaryTag:
        return BoundaryTag(TagKind(int(self.face_kind[face])), int(self.face_marker[face]))

    def conductor_faces(self, conductor: int) -> np.ndarray:
        return np.flatnonzero((self.face_kind == TagKind.FLOATING)
                              & (self.face_marker == conductor))

    def element_vertices(self, k: int) -> np.ndarray:
        return self.vertices[self.elements[k]]

    def jacobian(self, k: int):
        """Affine map matrix J (columns v1-v0, v2-v0) and its determinant."""
        v = self.vertices[self.elements[k]]
        J = np.column_stack([v[1] - v[0], v[2] - v[0]])
        return J, float(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])

    def signed_areas(self) -> np.ndarray:
        v = self.vertices[self.elements]
        e1 = v[:, 1] - v[:, 0]
        e2 = v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        """Lengths of local faces, shape (K, 3)."""
        v = self.vertices[self.elements]
        out = np.empty((self.n_elements, 3))
        for j, (a, b) in enumerate(FACE_VERTICES):
            out[:, j] = np.linalg.norm(v[:, b] - v[:, a], axis=1)
        return out

    def outward_normals(self) -> np.ndarray:
        """Unit outward normals of local faces, shape (K, 3, 2)."""
        v = self.vertices[self.elements]
        out = np.empty((self.n_elements, 3, 2))
        for j, (a, b) in enumerate(FACE_VERTICES):
            d = v[:, b] - v[:, a]
            length = np.linalg.norm(d, axis=1)
            out[:, j, 0] = d[:, 1] / length
            out[:, j, 1] = -d[:, 0] / length
        return out

    def boundary_markers(self) -> dict:
        """Boundary tags keyed by sorted vertex pair; input form of
        :func:`build_skeleton`."""
        return {tuple(sorted(map(int, self.face_vertices[f]))): self.tag(f)
                for f in self.boundary_faces}


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def build_skeleton(vertices, triangles, boundary_markers) -> Mesh2D:
    """Construct the face list, classify interior/boundary faces and check the
    mesh invariants.

    `boundary_markers` maps an edge (pair of vertex indices, any order) to a
    :class:`BoundaryTag`.  Every boundary edge needs a tag; interior edges
    must not carry one.  Clockwise triangles are reoriented.
    """
    vertices = np.array(vertices, dtype=float).reshape(-1, 2)
    elements = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    if elements.shape[0] == 0:
        raise MeshError("mesh has no elements")
    if not np.all(np.isfinite(vertices)):
        raise MeshError("non-finite vertex coordinates")
    if elements.min() < 0 or elements.max() >= vertices.shape[0]:
        raise MeshError("triangle references a vertex index out of range")
    if np.any((elements[:, 0] == elements[:, 1]) | (elements[:, 1] == elements[:, 2])
              | (elements[:, 0] == elements[:, 2])):
        raise MeshError("triangle with repeated vertex")

    v = vertices[elements]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    scale = np.maximum(np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e2, e2))
    degenerate = np.abs(det) <= 1e-14 * scale
    if np.any(degenerate):
        raise MeshError(f"degenerate triangle {int(np.flatnonzero(degenerate)[0])}")
    flip = det < 0
    elements[flip] = elements[flip][:, [0, 2, 1]]

    markers = {}
    for key, tag in dict(boundary_markers).items():
        a, b = (int(x) for x in key)
        if not isinstance(tag, BoundaryTag):
            raise MeshError(f"marker for edge {key} is not a BoundaryTag")
        if tag.kind == TagKind.INTERIOR:
            raise MeshError(f"edge {key}: boundary markers cannot be Interior")
        markers[_edge_key(a, b)] = tag

    face_index = {}
    face_vertices, face_elements, face_local = [], [], []
    element_faces = np.empty_like(elements)
    for k, tri in enumerate(elements):
        for j, (a, b) in enumerate(FACE_VERTICES):
            va, vb = int(tri[a]), int(tri[b])
            key = _edge_key(va, vb)
            f = face_index.get(key)
            if f is None:
                f = len(face_vertices)
                face_index[key] = f
                face_vertices.append([va, vb])
                face_elements.append([k, -1])
                face_local.append([j, -1])
            else:
                if face_elements[f][1] != -1:
                    raise MeshError(f"non-manifold edge {key}: more than two adjacent triangles")
                face_elements[f][1] = k
                face_local[f][1] = j
            element_faces[k, j] = f

    n_faces = len(face_vertices)
    face_vertices = np.array(face_vertices, dtype=np.int64)
    face_elements = np.array(face_elements, dtype=np.int64)
    face_local = np.array(face_local, dtype=np.int64)
    face_kind = np.zeros(n_faces, dtype=np.int64)
    face_marker = np.zeros(n_faces, dtype=np.int64)

    for key, tag in markers.items():
        f = face_index.get(key)
        if f is None:
            raise MeshError(f"marker given for edge {key} which is not in the mesh")
        if face_elements[f, 1] != -1:
            if tag.kind == TagKind.FLOATING:
                raise MeshError(f"Floating tag on interior edge {key}")
            raise MeshError(f"boundary tag on interior edge {key}")
        face_kind[f] = int(tag.kind)
        face_marker[f] = tag.id

    boundary = face_elements[:, 1] == -1
    untagged = boundary & (face_kind == TagKind.INTERIOR)
    if np.any(untagged):
        f = int(np.flatnonzero(untagged)[0])
        raise MeshError(f"untagged boundary edge {tuple(face_vertices[f].tolist())}")

    floating = face_marker[face_kind == TagKind.FLOATING]
    used = sorted(set(floating.tolist()))
    n_cond = len(used)
    if used != list(range(1, n_cond + 1)):
        raise MeshError(f"conductor indices must be contiguous from 1, got {used}")

    for arr in (vertices, elements, face_vertices, face_elements, face_local,
                face_kind, face_marker, element_faces):
        arr.setflags(write=False)
    return Mesh2D(vertices, elements, face_vertices, face_elements, face_local,
                  face_kind, face_marker, element_faces, n_cond)


# ---------------------------------------------------------------------------
# Generators


def generate_unit_square(n: int, tag: BoundaryTag | None = None) -> Mesh2D:
    """n x n unit square, each cell split along its (0,0)-(1,1) diagonal."""
    return generate_rectangle(1.0, 1.0, n, n, sides=None if tag is None else
                              dict.fromkeys(("left", "right", "bottom", "top"), tag))


def generate_rectangle(width, height, nx, ny, sides=None) -> Mesh2D:
    return generate_rect_with_fpc_plates(width, height, [], nx, ny, sides=sides,
                                         mirror_diagonals=False)


def generate_rect_with_fpc_plates(width: float, height: float, plates, nx: int, ny: int,
                                  sides: dict | None = None,
                                  mirror_diagonals: bool = True) -> Mesh2D:
    """Structured rectangle with rectangular conductor holes.

    Parameters
    ----------
    width, height : float
        Domain [0, width] x [0, height].
    plates : sequence of (x0, y0, x1, y1)
        Axis-aligned conductor rectangles.  Their edges must lie on grid lines,
        strictly inside the domain, and plates may not touch one another.
        Plate i becomes conductor i + 1.
    nx, ny : int
        Number of grid cells in each direction.
    sides : dict, optional
        ``{"left"|"right"|"bottom"|"top": BoundaryTag}``; missing sides default
        to Dirichlet marker 0.
    mirror_diagonals : bool
        Split cells left of the centre line along one diagonal and cells right
        of it along the other, so the mesh is mirror symmetric about
        x = width / 2 when nx is even.
    """
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be positive")
    if width <= 0 or height <= 0:
        raise MeshError("width and height must be positive")
    dx, dy = width / nx, height / ny
    side_tags = {s: BoundaryTag.dirichlet(0) for s in ("left", "right", "bottom", "top")}
    for key, tag in (sides or {}).items():
        if key not in side_tags:
            raise MeshError(f"unknown side {key!r}")
        side_tags[key] = tag

    hole = np.zeros((nx, ny), dtype=bool)
    plate_cells = []
    for idx, plate in enumerate(plates):
        x0, y0, x1, y1 = (float(c) for c in plate)
        if not (x0 < x1 and y0 < y1):
            raise MeshError(f"plate {idx + 1} has non-positive extent")
        ix = []
        for c, d in ((x0, dx), (x1, dx)):
            q = c / d
            if abs(q - round(q)) > 1e-9:
                raise MeshError(f"plate {idx + 1} edge x={c} is not on a grid line")
            ix.append(int(round(q)))
        iy = []
        for c, d in ((y0, dy), (y1, dy)):
            q = c / d
            if abs(q - round(q)) > 1e-9:
                raise MeshError(f"plate {idx + 1} edge y={c} is not on a grid line")
            iy.append(int(round(q)))
        if ix[0] <= 0 or iy[0] <= 0 or ix[1] >= nx or iy[1] >= ny:
            raise MeshError(f"plate {idx + 1} touches or crosses the outer boundary")
        # one-cell margin keeps distinct plates from touching
        grown = np.zeros_like(hole)
        grown[max(ix[0] - 1, 0):ix[1] + 1, max(iy[0] - 1, 0):iy[1] + 1] = True
        if np.any(grown & hole):
            raise MeshError(f"plate {idx + 1} overlaps or touches another plate")
        hole[ix[0]:ix[1], iy[0]:iy[1]] = True
        plate_cells.append((ix, iy))

    def vid(i, j):
        return j * (nx + 1) + i

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    all_vertices = np.column_stack([X.ravel(), Y.ravel()])

    tris = []
    for j in range(ny):
        for i in range(nx):
            if hole[i, j]:
                continue
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            right_half = mirror_diagonals and (i + 0.5) * dx > 0.5 * width
            if right_half:
                tris += [(a, b, d), (b, c, d)]
            else:
                tris += [(a, b, c), (a, c, d)]

    markers = {}
    for i in range(nx):
        markers[_edge_key(vid(i, 0), vid(i + 1, 0))] = side_tags["bottom"]
        markers[_edge_key(vid(i, ny), vid(i + 1, ny))] = side_tags["top"]
    for j in range(ny):
        markers[_edge_key(vid(0, j), vid(0, j + 1))] = side_tags["left"]
        markers[_edge_key(vid(nx, j), vid(nx, j + 1))] = side_tags["right"]
    for idx, (ix, iy) in enumerate(plate_cells):
        tag = BoundaryTag.floating(idx + 1)
        for i in range(ix[0], ix[1]):
            markers[_edge_key(vid(i, iy[0]), vid(i + 1, iy[0]))] = tag
            markers[_edge_key(vid(i, iy[1]), vid(i + 1, iy[1]))] = tag
        for j in range(iy[0], iy[1]):
            markers[_edge_key(vid(ix[0], j), vid(ix[0], j + 1))] = tag
            markers[_edge_key(vid(ix[1], j), vid(ix[1], j + 1))] = tag

    return _compact(all_vertices, tris, markers)


def _compact(vertices, tris, markers) -> Mesh2D:
    """Drop unreferenced vertices and renumber."""
    tris = np.array(tris, dtype=np.int64)
    used = np.unique(tris)
    new_id = -np.ones(len(vertices), dtype=np.int64)
    new_id[used] = np.arange(used.size)
    new_markers = {}
    for (a, b), tag in markers.items():
        na, nb = new_id[a], new_id[b]
        if na >= 0 and nb >= 0:
            new_markers[(int(na), int(nb))] = tag
    return build_skeleton(vertices[used], new_id[tris], new_markers)


def generate_annulus_with_fpc(r0: float, r2: float, r3: float, r1: float,
                              n_azimuthal: int, n_radial_inner: int,
                              n_radial_outer: int) -> Mesh2D:
    """Coaxial capacitor with a floating tube occupying r2 < r < r3.

    Two annuli, [r0, r2] and [r3, r1], are meshed with straight-edged rings.
    Ring radii are geometrically spaced (uniform in log r).  The circle r0 is
    tagged Dirichlet marker 0, r1 Dirichlet marker 1, and both r2 and r3 are
    conductor 1.
    """
    if not (0.0 < r0 < r2 < r3 < r1):
        raise MeshError("radii must satisfy 0 < r0 < r2 < r3 < r1")
    if n_azimuthal < 8:
        raise MeshError("n_azimuthal must be at least 8")
    if n_radial_inner < 1 or n_radial_outer < 1:
        raise MeshError("each annulus needs at least one radial layer")

    theta = 2.0 * np.pi * np.arange(n_azimuthal) / n_azimuthal
    inner = np.geomspace(r0, r2, n_radial_inner + 1)
    outer = np.geomspace(r3, r1, n_radial_outer + 1)
    inner[0], inner[-1], outer[0], outer[-1] = r0, r2, r3, r1

    vertices, tris, markers = [], [], {}
    base = 0
    ring_ids = []
    for radii in (inner, outer):
        ids = []
        for r in radii:
            ids.append(base + np.arange(n_azimuthal))
            vertices.append(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
            base += n_azimuthal
        for i in range(len(radii) - 1):
            lo, hi = ids[i], ids[i + 1]
            for j in range(n_azimuthal):
                jn = (j + 1) % n_azimuthal
                tris.append((lo[j], lo[jn], hi[jn]))
                tris.append((lo[j], hi[jn], hi[j]))
        ring_ids.append(ids)

    def tag_ring(ids, tag):
        for j in range(n_azimuthal):
            markers[_edge_key(int(ids[j]), int(ids[(j + 1) % n_azimuthal]))] = tag

    tag_ring(ring_ids[0][0], BoundaryTag.dirichlet(0))
    tag_ring(ring_ids[0][-1], BoundaryTag.floating(1))
    tag_ring(ring_ids[1][0], BoundaryTag.floating(1))
    tag_ring(ring_ids[1][-1], BoundaryTag.dirichlet(1))
    return build_skeleton(np.vstack(vertices), tris, markers)


# ---------------------------------------------------------------------------
# ASCII format


def save_mesh(mesh: Mesh2D, path) -> None:
    lines = ["hdgmesh 1", f"vertices {len(mesh.vertices)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"elements {mesh.n_elements}")
    lines += [f"{a} {b} {c}" for a, b, c in mesh.elements.tolist()]
    bfaces = mesh.boundary_faces
    lines.append(f"faces {bfaces.size}")
    for f in bfaces:
        a, b = mesh.face_vertices[f]
        lines.append(f"{a} {b} {_FILE_TAGS[TagKind(int(mesh.face_kind[f]))]} {mesh.face_marker[f]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh2D:
    text = Path(path).read_text().splitlines()
    rows = [(n + 1, line.split()) for n, line in enumerate(text)]
    rows = [(n, tok) for n, tok in rows if tok and not tok[0].startswith("#")]
    it = iter(rows)

    def next_row(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshError(f"{path}: unexpected end of file while reading {what}") from None

    def section(name):
        n, tok = next_row(f"'{name}' header")
        if len(tok) != 2 or tok[0] != name:
            raise MeshError(f"{path}:{n}: expected '{name} <count>'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshError(f"{path}:{n}: bad count {tok[1]!r}") from None
        if count < 0:
            raise MeshError(f"{path}:{n}: negative count")
        return count

    n, tok = next_row("header")
    if tok != ["hdgmesh", "1"]:
        raise MeshError(f"{path}:{n}: expected header 'hdgmesh 1'")

    vertices = []
    for _ in range(section("vertices")):
        n, tok = next_row("vertices")
        try:
            if len(tok) != 2:
                raise ValueError
            vertices.append((float(tok[0]), float(tok[1])))
        except ValueError:
            raise MeshError(f"{path}:{n}: expected 'x y'") from None

    elements = []
    for _ in range(section("elements")):
        n, tok = next_row("elements")
        try:
            if len(tok) != 3:
                raise ValueError
            elements.append(tuple(int(t) for t in tok))
        except ValueError:
            raise MeshError(f"{path}:{n}: expected 'i0 i1 i2'") from None

    markers = {}
    for _ in range(section("faces")):
        n, tok = next_row("faces")
        if len(tok) not in (3, 4) or tok[2] not in _FILE_KINDS:
            raise MeshError(f"{path}:{n}: expected 'v0 v1 D|N|C [id]'")
        try:
            a, b = int(tok[0]), int(tok[1])
            ident = int(tok[3]) if len(tok) == 4 else 0
        except ValueError:
            raise MeshError(f"{path}:{n}: bad face record") from None
        key = _edge_key(a, b)
        if key in markers:
            raise MeshError(f"{path}:{n}: duplicate face {key}")
        markers[key] = BoundaryTag(_FILE_KINDS[tok[2]], ident)

    extra = next(it, None)
    if extra is not None:
        raise MeshError(f"{path}:{extra[0]}: trailing content")
    try:
        return build_skeleton(np.array(vertices).reshape(-1, 2),
                              np.array(elements, dtype=np.int64).reshape(-1, 3), markers)
    except MeshError as exc:
        raise MeshError(f"{path}: {exc}") from None


def mesh_size(mesh: Mesh2D) -> float:
    """Longest edge in the mesh."""
    return float(mesh.edge_lengths().max())


def polygon_area(points) -> float:
    p = np.asarray(points, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def annulus_polygon_area(r_in: float, r_out: float, n: int) -> float:
    """Area between two regular n-gons inscribed in circles r_in < r_out."""
    return 0.5 * n * math.sin(2.0 * math.pi / n) * (r_out ** 2 - r_in ** 2)
