"""Built-in problems with analytic or reference solutions."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .local_ops import ProblemData
from .mesh import (BoundaryTag, Mesh2D, generate_annulus_with_fpc,
                   generate_rect_with_fpc_plates, generate_unit_square)

EPS0 = 8.8541878128e-12          # vacuum permittivity [F/m]
ELEMENTARY_CHARGE = 1.602176634e-19  # [C]


def charge_from_electrons(n: float) -> float:
    """Charge in coulombs of `n` elementary charges (negative n for electrons
    in excess is the caller's choice of sign)."""
    return n * ELEMENTARY_CHARGE


@dataclass(frozen=True)
class Scenario:
    name: str
    mesh: Mesh2D
    data: ProblemData
    phi_exact: Optional[Callable] = None
    E_exact: Optional[Callable] = None
    conductor_exact: Optional[tuple] = None   # exact conductor potentials, if known


# ---------------------------------------------------------------------------
# Coaxial capacitor with a floating tube


@dataclass(frozen=True)
class CoaxialSpec:
    """Two grounded/biased cylinders r0 < r1 with a floating tube r2 < r < r3.

    The inner cylinder r0 is held at V0, the outer r1 at V1; the tube carries
    charge Q per unit depth [C/m].
    """

    r0: float = 0.001
    r2: float = 0.008
    r3: float = 0.012
    r1: float = 0.02
    V0: float = 0.0
    V1: float = 10.0
    Q: float = 0.0
    eps: float = EPS0

    def __post_init__(self):
        if not 0 < self.r0 < self.r2 < self.r3 < self.r1:
            raise ValueError("radii must satisfy 0 < r0 < r2 < r3 < r1")
        if not self.eps > 0:
            raise ValueError("permittivity must be positive")

    def with_charge_in_e(self, n: float) -> "CoaxialSpec":
        return replace(self, Q=charge_from_electrons(n))


@dataclass(frozen=True)
class AnalyticCoaxial:
    """phi = a0 + b0 ln r on [r0, r2], a1 + b1 ln r on [r3, r1]."""

    spec: CoaxialSpec
    a0: float
    b0: float
    a1: float
    b1: float
    conductor_potential: float

    def potential_r(self, r):
        r = np.asarray(r, dtype=float)
        s = self.spec
        inner = self.a0 + self.b0 * np.log(r)
        outer = self.a1 + self.b1 * np.log(r)
        return np.where(r <= s.r2, inner, np.where(r >= s.r3, outer, self.conductor_potential))

    def potential(self, x, y):
        return self.potential_r(np.hypot(x, y))

    def field(self, x, y):
        """E = -grad phi = -b x / r^2 (b depends on the annulus)."""
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        r2 = x * x + y * y
        b = np.where(np.sqrt(r2) <= 0.5 * (self.spec.r2 + self.spec.r3), self.b0, self.b1)
        return -b * x / r2, -b * y / r2

    def charge(self) -> float:
        """Flux of eps E out of the tube, 2 pi eps (b0 - b1)."""
        return 2.0 * math.pi * self.spec.eps * (self.b0 - self.b1)


def analytic_coaxial(spec: CoaxialSpec) -> AnalyticCoaxial:
    """Closed-form potential of the coaxial capacitor with a floating tube.

    Continuity at the tube, a0 + b0 ln r2 = a1 + b1 ln r3, together with the
    charge relation b0 = b1 + Q / (2 pi eps) and the two boundary values gives
    b1 = (V1 - V0 - C20 q) / (C20 - C31) with C20 = ln(r2/r0), C31 = ln(r3/r1)
    and q = Q / (2 pi eps).
    """
    C20 = math.log(spec.r2 / spec.r0)
    C31 = math.log(spec.r3 / spec.r1)
    if C20 == C31:
        raise ValueError("degenerate geometry: ln(r2/r0) equals ln(r3/r1)")
    q = spec.Q / (2.0 * math.pi * spec.eps)
    b1 = (spec.V1 - spec.V0 - C20 * q) / (C20 - C31)
    b0 = b1 + q
    a0 = spec.V0 - b0 * math.log(spec.r0)
    a1 = spec.V1 - b1 * math.log(spec.r1)
    return AnalyticCoaxial(spec, a0, b0, a1, b1, spec.V0 + b0 * C20)


def coaxial_radial_counts(spec: CoaxialSpec, n_azimuthal: int):
    """Radial layer counts giving roughly square elements on geometric rings."""
    dtheta = 2.0 * math.pi / n_azimuthal
    inner = max(1, round(math.log(spec.r2 / spec.r0) / dtheta))
    outer = max(1, round(math.log(spec.r1 / spec.r3) / dtheta))
    return inner, outer


def coaxial_scenario(spec: CoaxialSpec = CoaxialSpec(), n_azimuthal: int = 32,
                     tau0: float = 1.0, n_radial_inner: int | None = None,
                     n_radial_outer: int | None = None) -> Scenario:
    auto_in, auto_out = coaxial_radial_counts(spec, n_azimuthal)
    mesh = generate_annulus_with_fpc(spec.r0, spec.r2, spec.r3, spec.r1, n_azimuthal,
                                     n_radial_inner or auto_in, n_radial_outer or auto_out)
    sol = analytic_coaxial(spec)
    data = ProblemData(permittivity=spec.eps, source=0.0,
                       dirichlet={0: spec.V0, 1: spec.V1}, charges=[spec.Q], tau0=tau0)
    return Scenario("coaxial", mesh, data, sol.potential, sol.field,
                    (sol.conductor_potential,))


# ---------------------------------------------------------------------------
# Manufactured solution on the unit square


@dataclass(frozen=True)
class ManufacturedSolution:
    """phi = sin(pi x) sin(pi y), rho = -div(eps grad phi) = 2 pi^2 eps phi."""

    eps: float = 1.0

    def potential(self, x, y):
        return np.sin(np.pi * x) * np.sin(np.pi * y)

    def field(self, x, y):
        return (-np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
                -np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))

    def source(self, x, y):
        return 2.0 * np.pi ** 2 * self.eps * self.potential(x, y)


def manufactured_square(n: int, eps: float = 1.0, tau0: float = 1.0) -> Scenario:
    """Homogeneous Dirichlet unit square with a smooth manufactured solution."""
    m = ManufacturedSolution(eps)
    mesh = generate_unit_square(n)
    data = ProblemData(permittivity=eps, source=m.source, dirichlet={0: 0.0}, tau0=tau0)
    return Scenario("manufactured_square", mesh, data, m.potential, m.field)


def conductor_edge_square(n: int, eps: float = 1.0, potential: float = 1.0,
                          tau0: float = 1.0) -> Scenario:
    """Unit square whose bottom edge is a floating conductor.

    phi = c + sin(pi x) sin(pi y) is constant (= c) on the whole boundary, so
    with the other three sides held at c and the conductor given the charge
    of the exact field, -2 eps, the floating potential is c.  The solution is
    smooth up to the conductor, unlike polygonal conductors whose corners
    limit convergence.
    """
    m = ManufacturedSolution(eps)
    mesh = generate_rect_with_fpc_plates(1.0, 1.0, [], n, n,
                                         sides={"bottom": BoundaryTag.floating(1)},
                                         mirror_diagonals=False)
    data = ProblemData(permittivity=eps, source=m.source, dirichlet={0: potential},
                       charges=[-2.0 * eps], tau0=tau0)
    return Scenario("conductor_edge_square", mesh, data,
                    lambda x, y: potential + m.potential(x, y), m.field, (potential,))


# ---------------------------------------------------------------------------
# Two floating plates in a biased rectangle

PLATE_WIDTH, PLATE_HEIGHT = 4.0, 2.0
SYMMETRIC_PLATES = ((1.0, 0.75, 1.5, 1.25), (2.5, 0.75, 3.0, 1.25))
ASYMMETRIC_PLATES = ((1.0, 0.75, 1.5, 1.25), (2.25, 0.5, 3.25, 1.0))


def two_plate_fpc_scenario(cells_per_unit: int = 4, plates=SYMMETRIC_PLATES,
                           charges=None, V_left: float = 0.0, V_right: float = 10.0,
                           eps: float = EPS0, tau0: float = 1.0) -> Scenario:
    """4 x 2 rectangle: left edge at V_left, right edge at V_right, insulated
    top and bottom, floating plates inside (uncharged by default).

    Plate edges must sit on the grid, which has `cells_per_unit` cells per
    unit length; multiples of 4 suit the built-in layouts.
    """
    n = int(cells_per_unit)
    sides = {"left": BoundaryTag.dirichlet(0), "right": BoundaryTag.dirichlet(1),
             "bottom": BoundaryTag.neumann(2), "top": BoundaryTag.neumann(2)}
    mesh = generate_rect_with_fpc_plates(PLATE_WIDTH, PLATE_HEIGHT, plates,
                                         round(n * PLATE_WIDTH), round(n * PLATE_HEIGHT),
                                         sides=sides)
    if charges is None:
        charges = [0.0] * len(plates)
    data = ProblemData(permittivity=eps, source=0.0,
                       dirichlet={0: V_left, 1: V_right}, neumann={2: 0.0},
                       charges=list(charges), tau0=tau0)
    exact = None
    if not plates:
        slope = (V_right - V_left) / PLATE_WIDTH
        exact = (lambda x, y: V_left + slope * np.asarray(x),
                 lambda x, y: (np.full(np.shape(x), -slope), np.zeros(np.shape(x))))
    return Scenario("two_plate", mesh, data, *(exact or (None, None)))
