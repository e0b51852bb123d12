"""
Ready-made geometries: the single tube in a square and the periodic exchanger.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import FemMatrices, MaterialField, assemble, case_of, poiseuille
from .decomp import Decomposer
from .finite_domain import ExchangerMetrics, exchanger_metrics, solve_mixed
from .mesh import BoundarySpec, Mesh2D, dirichlet, generate_square_with_tubes, neumann, periodic, robin
from .semi_infinite import AxialSolution
from .spectral import build_pencil, eigensolve

#: tubes of the exchanger: (center, sign of the flow)
EXCHANGER_TUBES = (((2.0, 2.0), 1), ((-2.0, -2.0), 1), ((-2.0, 2.0), -1), ((2.0, -2.0), -1))


def lateral(mesh: Mesh2D, a) -> BoundarySpec:
    """Uniform lateral condition from a Robin coefficient or the strings ``neumann``/``dirichlet``."""
    if isinstance(a, str):
        key = a.strip().lower()
        if key in ("neumann", "neu"):
            return BoundarySpec.uniform(mesh, neumann())
        if key in ("dirichlet", "dir"):
            return BoundarySpec.uniform(mesh, dirichlet())
        raise ValueError(f"unknown lateral condition {a!r}")
    return BoundarySpec.uniform(mesh, robin(float(a)))


def single_tube_mesh(resolution: float = 0.3, circle_segments: int = 64) -> Mesh2D:
    return generate_square_with_tubes(5.0, [((0.0, 0.0), 2.0)], resolution, circle_segments)


def single_tube(mesh: Mesh2D, a, Q: float, c: float = 1.0, sigma: float = 1.0) -> FemMatrices:
    """Square ``[-5,5]^2`` with a centred tube of radius 2 and Poiseuille flow ``Q``."""
    fem = assemble(mesh, MaterialField.uniform(mesh, c, sigma), lateral(mesh, a))
    return fem.with_velocity(poiseuille(mesh, [(1, Q)]))


def exchanger_mesh(resolution: float = 0.4, circle_segments: int = 48) -> Mesh2D:
    return generate_square_with_tubes(4.0, [(cen, 1.0) for cen, _ in EXCHANGER_TUBES], resolution, circle_segments)


def exchanger_bc(mesh: Mesh2D) -> BoundarySpec:
    return BoundarySpec({"left": periodic("x"), "right": periodic("x"),
                         "bottom": periodic("y"), "top": periodic("y")})


def exchanger(mesh: Mesh2D, Q: float) -> FemMatrices:
    """Periodic cell ``[-4,4]^2`` with two tubes at ``+Q`` and two at ``-Q``."""
    fem = assemble(mesh, MaterialField.uniform(mesh), exchanger_bc(mesh))
    return fem.with_velocity(poiseuille(mesh, [(k + 1, s * Q) for k, (_, s) in enumerate(EXCHANGER_TUBES)]))


def decomposer(fem: FemMatrices, n_neg: int = 50, n_pos: int = 50) -> Decomposer:
    basis = eigensolve(build_pencil(fem, case_of(fem)), n_neg, n_pos)
    return Decomposer(basis)


@dataclass(frozen=True)
class ExchangerRun:
    L: float
    Q: float
    metrics: ExchangerMetrics
    residual: float
    solution: AxialSolution


def run_exchanger(dec: Decomposer, L: float, Q: float, neumann_weight: float = 1.0) -> ExchangerRun:
    """Warm (+1) fluid enters the positive tubes at ``-L``, cold (-1) the negative ones at ``+L``.

    Temperatures are imposed on the inflow tube sections, zero flux on the
    rest of both faces; see :func:`graetz.finite_domain.solve_mixed`.
    """
    fem = dec.fem
    mesh = fem.mesh
    n = mesh.n_vertices
    mask_m = np.zeros(n, bool)
    mask_p = np.zeros(n, bool)
    T_m = np.zeros(n)
    T_p = np.zeros(n)
    inlets = {}
    for k, (_, s) in enumerate(EXCHANGER_TUBES):
        verts = mesh.subdomain_vertices(k + 1)
        if s > 0:
            mask_m[verts] = True
            T_m[verts] = 1.0
            inlets[k + 1] = 1.0
        else:
            mask_p[verts] = True
            T_p[verts] = -1.0
            inlets[k + 1] = -1.0
    sol = solve_mixed(dec, L, mask_m, mask_p, T_m, T_p, neumann_weight=neumann_weight)
    return ExchangerRun(L, Q, exchanger_metrics(sol, inlets, Q), sol.info["residual"], sol)
