import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from hdgfpc.pipeline import solve_problem
from hdgfpc.recovery import node_coordinates
from hdgfpc.scenarios import (ASYMMETRIC_PLATES, ELEMENTARY_CHARGE, EPS0, PLATE_WIDTH,
                              CoaxialSpec, ManufacturedSolution, analytic_coaxial,
                              charge_from_electrons, coaxial_scenario, conductor_edge_square,
                              manufactured_square, two_plate_fpc_scenario)


def coefficients_by_linear_solve(spec):
    """a0, b0, a1, b1 from boundary values, continuity and the charge jump."""
    l0, l1, l2, l3 = (math.log(r) for r in (spec.r0, spec.r1, spec.r2, spec.r3))
    M = np.array([[1.0, l0, 0.0, 0.0],
                  [0.0, 0.0, 1.0, l1],
                  [1.0, l2, -1.0, -l3],
                  [0.0, 1.0, 0.0, -1.0]])
    rhs = np.array([spec.V0, spec.V1, 0.0, spec.Q / (2 * math.pi * spec.eps)])
    return np.linalg.solve(M, rhs)


def fd_laplacian(f, x, y, h=1e-5):
    return (f(x + h, y) + f(x - h, y) + f(x, y + h) + f(x, y - h) - 4 * f(x, y)) / h ** 2


@pytest.mark.parametrize("spec", [
    CoaxialSpec(),
    CoaxialSpec().with_charge_in_e(-1e10),
    CoaxialSpec(V0=0.0, V1=0.0, Q=3e-10),
    CoaxialSpec(r0=0.5, r2=1.0, r3=1.5, r1=4.0, V0=-2.0, V1=7.0, Q=1.0, eps=2.0),
])
def test_closed_form_matches_linear_solve(spec):
    an = analytic_coaxial(spec)
    a0, b0, a1, b1 = coefficients_by_linear_solve(spec)
    for got, want in zip((an.a0, an.b0, an.a1, an.b1), (a0, b0, a1, b1)):
        assert got == pytest.approx(want, rel=1e-12, abs=1e-12 * max(abs(a0), abs(a1)))
    phi_c = a0 + b0 * math.log(spec.r2)
    assert an.conductor_potential == pytest.approx(phi_c, rel=1e-12, abs=1e-12 * abs(a0))
    # continuity on both sides of the tube and exact boundary values
    assert an.potential_r(spec.r2) == pytest.approx(an.conductor_potential, rel=1e-12, abs=1e-12)
    assert an.a1 + an.b1 * math.log(spec.r3) == pytest.approx(an.conductor_potential,
                                                                rel=1e-12, abs=1e-11)
    assert an.potential_r(spec.r0) == pytest.approx(spec.V0, abs=1e-12 * (1 + abs(a0)))
    assert an.potential_r(spec.r1) == pytest.approx(spec.V1, abs=1e-12 * (1 + abs(a1)))
    assert an.b0 - an.b1 == pytest.approx(spec.Q / (2 * math.pi * spec.eps), abs=1e-12 * abs(b0))


def test_equal_voltages_give_constant():
    an = analytic_coaxial(CoaxialSpec(V0=3.0, V1=3.0))
    r = np.linspace(0.001, 0.02, 11)
    np.testing.assert_allclose(an.potential_r(r), 3.0, atol=1e-12)
    Ex, Ey = an.field(r, 0 * r)
    np.testing.assert_allclose(Ex, 0.0, atol=1e-12)
    assert an.conductor_potential == pytest.approx(3.0, abs=1e-12)


def test_charge_only_case():
    spec = CoaxialSpec(V0=0.0, V1=0.0, Q=charge_from_electrons(-1e10))
    an = analytic_coaxial(spec)
    C31 = math.log(spec.r3 / spec.r1)
    # with both cylinders grounded, a1 = -b1 ln r1 so the tube sits at b1 * C31;
    # a negative charge drives it below ground
    assert an.conductor_potential == pytest.approx(an.b1 * C31, rel=1e-12)
    assert an.conductor_potential < 0
    assert an.charge() == pytest.approx(spec.Q, rel=1e-12)


def test_analytic_charge_by_flux_integral():
    spec = CoaxialSpec(Q=4e-10)
    an = analytic_coaxial(spec)
    # flux of eps E out of the tube: outward on r3 minus inward on r2
    theta = np.linspace(0, 2 * np.pi, 2001)[:-1]
    dtheta = theta[1] - theta[0]
    total = 0.0
    for r, sign in ((spec.r3 * 1.01, 1.0), (spec.r2 * 0.99, -1.0)):
        Ex, Ey = an.field(r * np.cos(theta), r * np.sin(theta))
        En = Ex * np.cos(theta) + Ey * np.sin(theta)
        total += sign * spec.eps * r * dtheta * En.sum()
    assert total == pytest.approx(spec.Q, rel=1e-10)


def test_degenerate_geometry_rejected():
    # ln(r2/r0) > 0 > ln(r3/r1) for ordered radii, so the degenerate case is
    # excluded by the ordering check at construction
    with pytest.raises(ValueError):
        CoaxialSpec(r0=0.01, r2=0.005)
    with pytest.raises(ValueError):
        CoaxialSpec(eps=0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0011, 0.0079), st.floats(0.0121, 0.0199))
def test_analytic_solution_is_harmonic(r_in, r_out):
    an = analytic_coaxial(CoaxialSpec().with_charge_in_e(-5e9))
    for r, b in ((r_in, an.b0), (r_out, an.b1)):
        # work in coordinates scaled by r so second derivatives are O(b)
        g = lambda u, v: an.potential(r * u, r * v)
        lap = fd_laplacian(g, math.cos(0.3), math.sin(0.3), h=1e-4)
        assert abs(lap) <= 1e-6 * (abs(b) + abs(float(an.potential_r(r))))


def test_conductor_potential_is_affine():
    def phi_c(V0, V1, Q):
        return analytic_coaxial(CoaxialSpec(V0=V0, V1=V1, Q=Q)).conductor_potential

    base = np.array([0.0, 0.0, 0.0])
    steps = [np.array([1.0, 0, 0]), np.array([0, 10.0, 0]), np.array([0, 0, 1e-9])]
    f0 = phi_c(*base)
    grads = [phi_c(*(base + s)) - f0 for s in steps]
    rng = np.random.default_rng(2)
    for _ in range(4):
        c = rng.uniform(-2, 2, 3)
        point = base + sum(ci * s for ci, s in zip(c, steps))
        expect = f0 + float(np.dot(c, grads))
        assert phi_c(*point) == pytest.approx(expect, rel=1e-12, abs=1e-12 * max(map(abs, grads)))


def test_electron_charge_unit():
    assert charge_from_electrons(1.0) == ELEMENTARY_CHARGE
    assert CoaxialSpec().with_charge_in_e(-1e10).Q == pytest.approx(-1.602176634e-9)


# ---------------------------------------------------------------------------


@pytest.mark.parametrize("eps", [1.0, 2.5])
def test_manufactured_source(eps):
    m = ManufacturedSolution(eps)
    assert m.source(0.5, 0.5) == pytest.approx(2 * np.pi ** 2 * eps)
    rng = np.random.default_rng(5)
    for x, y in rng.uniform(0.05, 0.95, (20, 2)):
        fd = -eps * fd_laplacian(m.potential, x, y, h=1e-4)
        assert fd == pytest.approx(m.source(x, y), rel=1e-5, abs=1e-5 * eps)
        h = 1e-6
        gx = (m.potential(x + h, y) - m.potential(x - h, y)) / (2 * h)
        gy = (m.potential(x, y + h) - m.potential(x, y - h)) / (2 * h)
        Ex, Ey = m.field(x, y)
        assert (Ex, Ey) == pytest.approx((-gx, -gy), abs=1e-8)


def test_manufactured_boundary_is_zero():
    m = ManufacturedSolution()
    t = np.linspace(0, 1, 17)
    for x, y in ((t, 0 * t), (t, 1 + 0 * t), (0 * t, t), (1 + 0 * t, t)):
        np.testing.assert_allclose(m.potential(x, y), 0.0, atol=1e-15)
    sc = manufactured_square(4)
    assert sc.mesh.n_elements == 32 and sc.data.dirichlet == {0: 0.0}


def test_conductor_edge_charge_matches_exact_field():
    sc = conductor_edge_square(4, eps=2.0)
    # flux of eps E out of the conductor through y = 0 is eps * int dphi/dy dx
    # into the domain with E = -grad phi: -eps * int pi sin(pi x) dx = -2 eps
    assert sc.data.charges == [-4.0]
    x = np.linspace(0, 1, 20001)
    Ex, Ey = sc.E_exact(x, 0 * x)
    assert trapezoid(2.0 * Ey, x) == pytest.approx(-4.0, rel=1e-6)


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def symmetric_run():
    sc = two_plate_fpc_scenario(4)
    return solve_problem(sc.mesh, 2, sc.data).solution


def test_symmetric_plates_sum(symmetric_run):
    phi1, phi2 = symmetric_run.conductor_potentials
    assert phi1 + phi2 == pytest.approx(10.0, abs=1e-8)
    assert 0.0 < phi1 < phi2 < 10.0


def test_mirrored_run(symmetric_run):
    sc = two_plate_fpc_scenario(4, V_left=10.0, V_right=0.0)
    mirrored = solve_problem(sc.mesh, 2, sc.data).solution.conductor_potentials
    phi1, phi2 = symmetric_run.conductor_potentials
    assert mirrored[0] == pytest.approx(phi2, abs=1e-8)
    assert mirrored[1] == pytest.approx(phi1, abs=1e-8)


def test_asymmetric_plates_differ():
    sc = two_plate_fpc_scenario(4, plates=ASYMMETRIC_PLATES)
    run = solve_problem(sc.mesh, 2, sc.data)
    phi1, phi2 = run.solution.conductor_potentials
    assert abs(phi1 - phi2) > 10 * 1e-10 * 10.0
    assert phi1 + phi2 != pytest.approx(10.0, abs=1e-3)


@pytest.mark.parametrize("p", [1, 3])
def test_no_plates_is_linear(p):
    sc = two_plate_fpc_scenario(2, plates=())
    sol = solve_problem(sc.mesh, p, sc.data).solution
    x = node_coordinates(sol)[..., 0]
    np.testing.assert_allclose(sol.phi, 10.0 * x / PLATE_WIDTH, atol=1e-10)
    np.testing.assert_allclose(sol.E[..., 0], -10.0 / PLATE_WIDTH, atol=1e-10)


def test_plate_scenario_defaults():
    sc = two_plate_fpc_scenario()
    assert sc.mesh.conductor_count == 2
    assert sc.data.charges == [0.0, 0.0]
    assert sc.data.eps(0) == EPS0


@pytest.mark.parametrize("n_az", [8, 16])
def test_coaxial_scenario_mesh(n_az):
    sc = coaxial_scenario(n_azimuthal=n_az)
    assert sc.mesh.conductor_count == 1
    r = np.hypot(*sc.mesh.vertices.T)
    spec = CoaxialSpec()
    assert r.min() == pytest.approx(spec.r0) and r.max() == pytest.approx(spec.r1)
    assert not ((r > spec.r2 * (1 + 1e-12)) & (r < spec.r3 * (1 - 1e-12))).any()
