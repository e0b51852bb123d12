"""
Direct 3D reference solve on ``Omega x [z1, z2]``.

The cross-section uses the same P1 space as the spectral solver; the axial
direction uses continuous P1 elements on a uniform grid.  With ``Az`` the
axial stiffness, ``Mz`` the axial mass and ``Cz_lk = int psi_l psi_k'`` the
axial convection matrix, the weak form of

    c T'' + div(sigma grad T) - h T' = 0

is ``(Az x M_c + Mz x K + Cz x M_h) T = (face flux terms)``.  Temperatures
are imposed on the inflow parts of the two faces (where the problem is
coercive) and fluxes elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import FemMatrices


class InflowHypothesisError(ValueError):
    """Inflow parts of the faces are not all carrying temperature data."""


@dataclass(frozen=True)
class FaceData:
    """Conditions on one face: Dirichlet mask and values, flux values elsewhere."""

    mask: np.ndarray
    T: np.ndarray
    S: np.ndarray

    @classmethod
    def dirichlet(cls, T):
        T = np.asarray(T, dtype=float)
        return cls(np.ones(len(T), bool), T, np.zeros(len(T)))

    @classmethod
    def neumann(cls, S):
        S = np.asarray(S, dtype=float)
        return cls(np.zeros(len(S), bool), np.zeros(len(S)), S)


@dataclass(frozen=True)
class Grid3D:
    fem: FemMatrices
    z: np.ndarray
    T: np.ndarray          # (n_layers, n_vertices)

    def layer(self, k: int) -> np.ndarray:
        return self.T[k]


def axial_matrices(n_int: int, dz: float):
    """P1 axial stiffness, mass and convection matrices on ``n_int`` intervals."""
    n = n_int + 1
    main = np.full(n, 2.0)
    main[[0, -1]] = 1.0
    off = np.ones(n - 1)
    Az = sp.diags([-off, main, -off], [-1, 0, 1]) / dz
    Mz = sp.diags([off, 2 * main, off], [-1, 0, 1]) * (dz / 6)
    cdiag = np.zeros(n)
    cdiag[0], cdiag[-1] = -0.5, 0.5
    Cz = sp.diags([-0.5 * off, cdiag, 0.5 * off], [-1, 0, 1])
    return Az.tocsr(), Mz.tocsr(), Cz.tocsr()


def default_nz(length: float, lam_max: float, c_min: float = 1.0) -> int:
    """Axial intervals with ``c / dz^2 >= 10 |lam|_max``."""
    dz = np.sqrt(c_min / (10 * max(lam_max, 1e-12)))
    return max(3, int(np.ceil(length / dz)))


def check_inflow(fem: FemMatrices, face1: FaceData, face2: FaceData) -> None:
    """Inflow parts (h > 0 at z1, h < 0 at z2) must carry Dirichlet data."""
    free = fem.dofs.vertex_dof >= 0
    bad1 = free & (fem.h > 0) & ~face1.mask
    bad2 = free & (fem.h < 0) & ~face2.mask
    if bad1.any() or bad2.any():
        raise InflowHypothesisError(
            f"{int(bad1.sum())} inflow vertices at z1 and {int(bad2.sum())} at z2 lack temperature data; "
            "the bilinear form is not coercive without them")


def solve_3d(fem: FemMatrices, z1: float, z2: float, nz: int, face1: FaceData, face2: FaceData) -> Grid3D:
    """Reference solution on ``nz`` uniform axial intervals."""
    if nz < 2:
        raise ValueError("need at least 2 axial intervals (3 layers)")
    if not z2 > z1:
        raise ValueError("z2 must exceed z1")
    check_inflow(fem, face1, face2)
    dz = (z2 - z1) / nz
    Az, Mz, Cz = axial_matrices(nz, dz)
    A = (sp.kron(Az, fem.M_c) + sp.kron(Mz, fem.K) + sp.kron(Cz, fem.M_h)).tocsr()
    d = fem.dofs
    n = d.n_dofs
    nl = nz + 1
    rhs = np.zeros(nl * n)
    rhs[(nl - 1) * n:] += d.restrict_load(fem.M_c_full @ face2.S)
    rhs[:n] -= d.restrict_load(fem.M_c_full @ face1.S)
    known = np.zeros(nl * n, bool)
    vals = np.zeros(nl * n)
    for layer, face in ((0, face1), (nl - 1, face2)):
        m = d.from_nodal(face.mask.astype(float)) > 0.5
        idx = layer * n + np.nonzero(m)[0]
        known[idx] = True
        vals[idx] = d.from_nodal(face.T)[m]
    free = ~known
    b = rhs[free] - A[free][:, known] @ vals[known]
    x = vals.copy()
    try:
        x[free] = spla.spsolve(A[free][:, free].tocsc(), b)
    except RuntimeError as exc:
        raise np.linalg.LinAlgError(f"3D solve failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("3D solve produced non-finite values")
    T = np.vstack([d.prolong(x[k * n:(k + 1) * n]) for k in range(nl)])
    return Grid3D(fem, np.linspace(z1, z2, nl), T)


@dataclass(frozen=True)
class ErrorReport:
    relative: float
    per_layer: np.ndarray
    z: np.ndarray


def _trapz(y, z):
    return float(np.sum((y[1:] + y[:-1]) * np.diff(z)) / 2)


def compare(spectral, grid: Grid3D) -> ErrorReport:
    """c-weighted relative L2 error of ``spectral`` (anything with ``evaluate(z)``) on the grid."""
    Mc = grid.fem.M_c_full
    if grid.T.shape[1] != Mc.shape[0]:
        raise ValueError("mismatched discretizations")
    err = np.empty(len(grid.z))
    ref = np.empty(len(grid.z))
    for k, z in enumerate(grid.z):
        e = spectral.evaluate(z) - grid.T[k]
        err[k] = e @ (Mc @ e)
        ref[k] = grid.T[k] @ (Mc @ grid.T[k])
    tot_ref = _trapz(ref, grid.z)
    tot_err = _trapz(err, grid.z)
    rel = np.sqrt(tot_err / tot_ref) if tot_ref > 0 else np.sqrt(tot_err)
    with np.errstate(divide="ignore", invalid="ignore"):
        prof = np.where(ref > 0, np.sqrt(err / np.where(ref > 0, ref, 1)), np.sqrt(err))
    return ErrorReport(float(rel), prof, grid.z.copy())
