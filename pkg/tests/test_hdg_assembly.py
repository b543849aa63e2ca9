import numpy as np
import pytest
import scipy.sparse.linalg as spla

from hdgfpc.basis import build_reference_element
from hdgfpc.hdg_assembly import (AssemblyError, assemble_global, build_dof_map,
                                 dg_unknown_count, dump_matrix, expected_dof_count,
                                 load_matrix_dump)
from hdgfpc.local_ops import ProblemData, assemble_local, condense, stabilization_tau
from hdgfpc.mesh import build_skeleton, generate_unit_square
from hdgfpc.pipeline import assemble_system
from hdgfpc.recovery import recover_local_fields
from hdgfpc.scenarios import CoaxialSpec, coaxial_scenario
from oracles import monolithic_solve, square_ring_mesh, two_triangle_square

# HDG dimensions reported for orders 1..5 on one fixed tetrahedral mesh
REFERENCE_HDG_DIMENSIONS = {1: 252_319, 2: 378_478, 3: 504_637, 4: 630_796, 5: 756_955}
REFERENCE_FACES = 126_159

RING_DATA = ProblemData(
    permittivity=np.array([1.0, 2.0, 1.5, 0.7, 1.1, 3.0, 0.9, 1.2]),
    source=lambda x, y: 1.0 + x * y,
    dirichlet={0: lambda x, y: 1.0 + 0.5 * x - 0.25 * y},
    neumann={2: lambda x, y: 0.3 + 0.1 * x},
    charges=[0.7], tau0=1.3)


def test_two_triangle_dof_count():
    mesh = two_triangle_square()
    dm = build_dof_map(mesh, 2)
    assert dm.n_dof == 3
    assert list(dm.face_dofs(mesh.interior_faces[0])) == [0, 1, 2]
    for f in mesh.boundary_faces:
        with pytest.raises(KeyError):
            dm.face_dofs(f)


@pytest.mark.parametrize("n_az", [8, 16])
def test_coaxial_dof_count(n_az):
    mesh = coaxial_scenario(n_azimuthal=n_az).mesh
    dm = build_dof_map(mesh, 2)
    assert dm.n_dof == mesh.n_interior_faces * 3 + 1
    assert dm.n_dof == expected_dof_count(mesh, build_reference_element(2))
    assert dm.conductor_dofs.tolist() == [dm.n_dof - 1]


@pytest.mark.parametrize("p, dim", sorted(REFERENCE_HDG_DIMENSIONS.items()))
def test_reference_dimension_counts(p, dim):
    assert REFERENCE_FACES * build_reference_element(p).n_face_nodes + 1 == dim


@pytest.mark.parametrize("p", [1, 2, 3])
def test_shared_face_gathers_agree_in_space(p):
    mesh = square_ring_mesh()
    ref = build_reference_element(p)
    dm = build_dof_map(mesh, ref)
    seen = {}
    for k in range(mesh.n_elements):
        v = mesh.vertices[mesh.elements[k]]
        for j, (a, b) in enumerate(((0, 1), (1, 2), (2, 0))):
            pts = v[a] + np.outer(ref.edge_nodes, v[b] - v[a])
            for dof, x in zip(dm.element_dofs[k][j * ref.n_face_nodes:(j + 1) * ref.n_face_nodes],
                              pts):
                if dof >= 0:
                    if dof in seen:
                        np.testing.assert_allclose(seen[dof], x, atol=1e-14)
                    seen[dof] = x
    assert len(seen) == dm.n_trace_dofs


def test_homogeneous_problem_gives_zero():
    mesh = square_ring_mesh()
    data = ProblemData(1.0, 0.0, {0: 0.0}, {2: 0.0}, charges=[0.0])
    _, _, system = assemble_system(mesh, build_reference_element(2), data)
    np.testing.assert_array_equal(system.rhs, 0.0)
    np.testing.assert_array_equal(spla.spsolve(system.matrix.tocsc(), system.rhs), 0.0)


@pytest.mark.parametrize("p", [1, 2])
def test_matches_monolithic_oracle(p):
    mesh = square_ring_mesh()
    ref = build_reference_element(p)
    local, dm, system = assemble_system(mesh, ref, RING_DATA)
    x = spla.spsolve(system.matrix.tocsc(), system.rhs)
    sol = recover_local_fields(mesh, ref, RING_DATA, local, dm, x)
    tau = lambda k: stabilization_tau(mesh, k, RING_DATA.tau0, RING_DATA.eps(k))
    loc_ref, trace_ref, cond_ref = monolithic_solve(mesh, p, RING_DATA, tau)
    scale = np.abs(loc_ref).max()
    Np = ref.n_nodes
    np.testing.assert_allclose(sol.phi, loc_ref[:, :Np], atol=1e-10 * scale)
    np.testing.assert_allclose(sol.E[:, :, 0], loc_ref[:, Np:2 * Np], atol=1e-10 * scale)
    np.testing.assert_allclose(sol.E[:, :, 1], loc_ref[:, 2 * Np:], atol=1e-10 * scale)
    np.testing.assert_allclose(x[:dm.n_trace_dofs], trace_ref, atol=1e-10 * scale)
    np.testing.assert_allclose(sol.conductor_potentials, cond_ref, atol=1e-10 * scale)


def test_element_order_independence():
    mesh = square_ring_mesh()
    ref = build_reference_element(2)
    _, _, base = assemble_system(mesh, ref, RING_DATA)
    perm = np.random.default_rng(3).permutation(mesh.n_elements)
    markers = {tuple(sorted(mesh.face_vertices[f].tolist())): mesh.tag(f)
               for f in mesh.boundary_faces}
    shuffled = build_skeleton(mesh.vertices, mesh.elements[perm], markers)
    data = ProblemData(RING_DATA.permittivity[perm], RING_DATA.source, RING_DATA.dirichlet,
                       RING_DATA.neumann, RING_DATA.charges, RING_DATA.tau0)
    _, dm2, other = assemble_system(shuffled, ref, data)
    # face numbering may differ; compare through the solution, which is unique
    x1 = spla.spsolve(base.matrix.tocsc(), base.rhs)
    x2 = spla.spsolve(other.matrix.tocsc(), other.rhs)
    assert np.isclose(x1[-1], x2[-1], rtol=1e-12)
    assert base.nnz == other.nnz
    np.testing.assert_allclose(np.sort(base.matrix.data), np.sort(other.matrix.data),
                               rtol=1e-12, atol=1e-14)


def test_triplet_order_does_not_matter():
    mesh = square_ring_mesh()
    ref = build_reference_element(2)
    dm = build_dof_map(mesh, ref)
    blocks = [condense(assemble_local(mesh, ref, k, RING_DATA)) for k in range(mesh.n_elements)]
    a = assemble_global(blocks, dm, RING_DATA)
    order = [7, 3, 0, 5, 1, 6, 2, 4]
    b = assemble_global([blocks[i] for i in order],
                        type(dm)(dm.n_face_nodes, dm.face_dof_start, dm.conductor_dofs,
                                 tuple(dm.element_dofs[i] for i in order),
                                 tuple(dm.element_conductors[i] for i in order), dm.n_dof),
                        RING_DATA)
    assert abs(a.matrix - b.matrix).max() <= 1e-13 * abs(a.matrix).max()
    np.testing.assert_allclose(a.rhs, b.rhs, rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("tau0", [0.5, 1.0, 2.0])
def test_global_matrix_symmetric(tau0):
    sc = coaxial_scenario(n_azimuthal=8, tau0=tau0)
    _, _, system = assemble_system(sc.mesh, build_reference_element(2), sc.data)
    assert system.symmetry_error() <= 1e-12


def test_conductor_row_carries_charge():
    mesh = square_ring_mesh()
    data = ProblemData(1.0, 0.0, {0: 0.0}, {2: 0.0}, charges=[2.5])
    _, dm, system = assemble_system(mesh, build_reference_element(1), data)
    assert system.rhs[dm.conductor_dofs[0]] == 2.5
    np.testing.assert_array_equal(system.rhs[:dm.n_trace_dofs], 0.0)


def test_matrix_dump_round_trip(tmp_path):
    sc = coaxial_scenario(n_azimuthal=8)
    _, _, system = assemble_system(sc.mesh, build_reference_element(2), sc.data)
    path = tmp_path / "A.txt"
    dump_matrix(system, path)
    header = path.read_text().splitlines()[0].split()
    assert [int(t) for t in header] == [system.n_dof, system.nnz]
    back = load_matrix_dump(path)
    assert (back != system.matrix).nnz == 0


def test_dof_ratio_decreases_with_order():
    mesh = generate_unit_square(4)
    ratios = []
    for p in range(1, 7):
        ref = build_reference_element(p)
        ratios.append(build_dof_map(mesh, ref).n_dof / dg_unknown_count(mesh, ref))
    assert all(b < a for a, b in zip(ratios, ratios[1:]))


def test_charge_count_mismatch():
    mesh = square_ring_mesh()
    ref = build_reference_element(1)
    dm = build_dof_map(mesh, ref)
    data = ProblemData(1.0, 0.0, {0: 0.0}, {2: 0.0}, charges=[0.0])
    blocks = [condense(assemble_local(mesh, ref, k, data)) for k in range(mesh.n_elements)]
    bad = ProblemData(1.0, 0.0, {0: 0.0}, {2: 0.0}, charges=[0.0, 1.0])
    with pytest.raises(AssemblyError, match="charges"):
        assemble_global(blocks, dm, bad)
    with pytest.raises(AssemblyError):
        assemble_global(blocks[:-1], dm, data)
