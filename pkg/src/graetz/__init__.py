"""Spectral solver for the generalized Graetz problem."""
from .assembly import (Case, CaseClass, FemMatrices, MaterialField, VelocityField, assemble, case_of,
                       classify_case, laplace_inverse, poiseuille, total_flow)
from .decomp import Decomposer, DecompResult, GramP, IncompatibleDataError, decompose, gram_P, solve_B, u_star
from .finite_domain import (MOperator, ZSystem, assemble_M, assemble_Z_dirichlet, assemble_Z_neumann,
                            bulk_temperature, exchanger_metrics, solve_mixed, solve_Z, spectral_radius)
from .mesh import (BoundaryCondition, BoundarySpec, Mesh2D, PeriodicPairing, dirichlet,
                   generate_square_with_tubes, generate_structured_rectangle, load_mesh, neumann,
                   pair_periodic, periodic, robin, save_mesh)
from .oracle import FaceData, Grid3D, compare, solve_3d
from .semi_infinite import AxialSolution, solve_semi_dirichlet, solve_semi_neumann
from .spectral import Pencil, SpectralBasis, apply_A, apply_A_inverse, build_pencil, eigensolve, h_inner
from .viscous import ViscousLift, lift_residual, viscous_lift

__version__ = "0.1.0"
