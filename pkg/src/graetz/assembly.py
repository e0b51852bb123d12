"""
P1 finite-element assembly on the cross-section.

All matrices are assembled first on the full vertex set ("nodal" space) and
then restricted to the degrees of freedom left after Dirichlet elimination
and periodic identification, ``A_dof = E.T @ A_full @ E`` where ``E`` is the
0/1 prolongation from dofs to vertices.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import BoundarySpec, Mesh2D, pair_periodic

TOL_BALANCE = 1e-10


class CaseClass(Enum):
    CONSTANTS_CONTROLLED = "constants_controlled"
    UNBALANCED_POSITIVE = "unbalanced_positive"
    UNBALANCED_NEGATIVE = "unbalanced_negative"
    BALANCED = "balanced"

    @property
    def controlled(self) -> bool:
        return self is CaseClass.CONSTANTS_CONTROLLED


@dataclass(frozen=True)
class Case:
    kind: CaseClass
    flow: float

    @property
    def controlled(self) -> bool:
        return self.kind.controlled

    @property
    def balanced(self) -> bool:
        return self.kind is CaseClass.BALANCED


@dataclass(frozen=True)
class MaterialField:
    """Per-triangle heat capacity weight ``c`` and conductivity ``sigma``."""

    c: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        s = np.asarray(self.sigma, dtype=float)
        if c.shape != s.shape or c.ndim != 1:
            raise ValueError("c and sigma must be 1-D per-triangle arrays of equal length")
        if np.any(c <= 0) or np.any(s <= 0) or not (np.all(np.isfinite(c)) and np.all(np.isfinite(s))):
            raise ValueError("c and sigma must be positive and finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sigma", s)

    @classmethod
    def uniform(cls, mesh: Mesh2D, c: float = 1.0, sigma: float = 1.0) -> "MaterialField":
        n = mesh.n_triangles
        return cls(np.full(n, float(c)), np.full(n, float(sigma)))

    @classmethod
    def by_subdomain(cls, mesh: Mesh2D, values: dict) -> "MaterialField":
        """``values[label] = (c, sigma)``; a missing label falls back to ``values[None]``."""
        c = np.empty(mesh.n_triangles)
        s = np.empty(mesh.n_triangles)
        for lab in np.unique(mesh.labels):
            cv, sv = values.get(int(lab), values.get(None, (None, None)))
            if cv is None:
                raise ValueError(f"no material given for subdomain {lab}")
            c[mesh.labels == lab] = cv
            s[mesh.labels == lab] = sv
        return cls(c, s)


@dataclass(frozen=True)
class Tube:
    id: int
    center: tuple
    radius: float
    Q: float


@dataclass(frozen=True)
class VelocityField:
    """Axial velocity ``h`` per vertex, with the tubes it was built from."""

    h: np.ndarray
    tubes: tuple = ()

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.h))) if self.h.size else 0.0


@dataclass(frozen=True)
class DofMap:
    """Prolongation ``E`` (vertices x dofs) after Dirichlet and periodic handling."""

    E: sp.csr_matrix
    vertex_dof: np.ndarray          # dof index per vertex, -1 on Dirichlet vertices
    dirichlet_vertices: np.ndarray

    @property
    def n_dofs(self) -> int:
        return self.E.shape[1]

    def restrict(self, A):
        return (self.E.T @ A @ self.E).tocsr()

    def prolong(self, x):
        return self.E @ x

    def restrict_load(self, F):
        return self.E.T @ F

    def from_nodal(self, v):
        """Dof values of a nodal field (value at the class representative)."""
        out = np.zeros(self.n_dofs)
        ok = self.vertex_dof >= 0
        out[self.vertex_dof[ok]] = np.asarray(v)[ok]
        return out


@dataclass(frozen=True)
class FemMatrices:
    """Assembled matrices; ``*_full`` on all vertices, the rest in dof space.

    ``mass_full`` is the unweighted P1 mass, used to turn nodal source terms
    into loads for the Laplace solves.
    """

    mesh: Mesh2D
    material: MaterialField
    bc: BoundarySpec
    dofs: DofMap
    M_c_full: sp.csr_matrix
    M_h_full: sp.csr_matrix
    K_sigma_full: sp.csr_matrix
    R_a_full: sp.csr_matrix
    mass_full: sp.csr_matrix
    h: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def constants_controlled(self) -> bool:
        return self.bc.constants_controlled

    @property
    def M_c(self):
        return self._reduced("M_c", self.M_c_full)

    @property
    def M_h(self):
        return self._reduced("M_h", self.M_h_full)

    @property
    def K_sigma(self):
        return self._reduced("K_sigma", self.K_sigma_full)

    @property
    def R_a(self):
        return self._reduced("R_a", self.R_a_full)

    @property
    def K_full(self):
        """Stiffness of the H inner product on vertices: ``K_sigma + R_a``."""
        if "K_full" not in self._cache:
            self._cache["K_full"] = (self.K_sigma_full + self.R_a_full).tocsr()
        return self._cache["K_full"]

    @property
    def K(self):
        return self._reduced("K", self.K_full)

    def _reduced(self, name, A):
        if name not in self._cache:
            self._cache[name] = self.dofs.restrict(A)
        return self._cache[name]

    def with_velocity(self, velocity: "VelocityField | np.ndarray") -> "FemMatrices":
        h = velocity.h if isinstance(velocity, VelocityField) else np.asarray(velocity, dtype=float)
        return replace(self, M_h_full=_weighted_mass(self.mesh, h), h=np.array(h, dtype=float), _cache={})

    # quadrature helpers on nodal fields
    def integrate(self, f) -> float:
        return float(np.sum(self.mass_full @ np.asarray(f, dtype=float)))

    def integrate_c(self, f) -> float:
        return float(np.sum(self.M_c_full @ np.asarray(f, dtype=float)))

    @property
    def area(self) -> float:
        return float(self.mesh.areas.sum())

    # factorizations -------------------------------------------------------
    def _factor(self, name, A):
        if name not in self._cache:
            self._cache[name] = spla.splu(A.tocsc())
        return self._cache[name]

    def solve_mass_c(self, F_dof):
        return self._factor("lu_Mc", self.M_c).solve(F_dof)

    def pin(self) -> int | None:
        """Dof pinned to zero when the constants are not controlled."""
        return None if self.constants_controlled else 0

    def solve_stiffness(self, F_dof):
        """Solve ``K s = F`` in dof space; uncontrolled case: one dof pinned, ``F`` must sum to zero."""
        p = self.pin()
        if p is None:
            return self._factor("lu_K", self.K).solve(F_dof)
        keep = np.arange(self.dofs.n_dofs) != p
        lu = self._factor("lu_Kpin", self.K[keep][:, keep])
        s = np.zeros(self.dofs.n_dofs)
        s[keep] = lu.solve(np.asarray(F_dof)[keep])
        return s


# -- element kernels ----------------------------------------------------------

def _gradients(mesh: Mesh2D):
    """Barycentric gradients per triangle, shape (m, 3, 2), and areas."""
    p = mesh.vertices[mesh.triangles]
    area = mesh.areas
    # grad lambda_i = rot90(p_k - p_j) / (2A)
    d = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    g = np.stack([-d[..., 1], d[..., 0]], axis=-1) / (2 * area[:, None, None])
    return g, area


def _scatter(mesh: Mesh2D, local):
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def _symmetrize(A):
    # exact symmetry; local blocks are symmetric so this only removes round-off order effects
    return ((A + A.T) * 0.5).tocsr()


_MASS_LOCAL = (np.ones((3, 3)) + np.eye(3)) / 12.0


def _mass(mesh: Mesh2D, weight=None):
    area = mesh.areas
    w = area if weight is None else area * weight
    return _symmetrize(_scatter(mesh, w[:, None, None] * _MASS_LOCAL[None]))


def _cubic_weights():
    w = np.ones((3, 3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                n_eq = len({i, j, k})
                w[i, j, k] = {1: 6.0, 2: 2.0, 3: 1.0}[n_eq]
    return w / 60.0


_CUBIC = _cubic_weights()


def _weighted_mass(mesh: Mesh2D, h):
    """Exact mass weighted by a P1 field: ``int h phi_i phi_j``."""
    hl = np.asarray(h, dtype=float)[mesh.triangles]          # (m, 3)
    local = np.einsum("ijk,mk->mij", _CUBIC, hl) * mesh.areas[:, None, None]
    return _symmetrize(_scatter(mesh, local))


def _stiffness(mesh: Mesh2D, sigma):
    g, area = _gradients(mesh)
    local = np.einsum("mid,mjd->mij", g, g) * (area * sigma)[:, None, None]
    return _symmetrize(_scatter(mesh, local))


def _robin(mesh: Mesh2D, bc: BoundarySpec):
    n = mesh.n_vertices
    rows, cols, vals = [], [], []
    for tag in mesh.tags:
        cond = bc[tag]
        if cond.kind != "robin":
            continue
        e = mesh.tag_edges(tag)
        length = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
        if not np.sum(length) > 0:
            raise ValueError(f"Robin tag {tag!r} has zero measure")
        loc = cond.a * length[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)[None]
        rows.append(np.repeat(e, 2, axis=1).ravel())
        cols.append(np.tile(e, (1, 2)).ravel())
        vals.append(loc.ravel())
    if not rows:
        return sp.csr_matrix((n, n))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)).tocsr()
    return _symmetrize(A)


def build_dofmap(mesh: Mesh2D, bc: BoundarySpec) -> DofMap:
    n = mesh.n_vertices
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    pairing = pair_periodic(mesh, bc)
    for m, s in pairing.all_pairs().tolist():
        rm, rs = find(m), find(s)
        if rm != rs:
            parent[max(rm, rs)] = min(rm, rs)
    root = np.array([find(i) for i in range(n)])

    dirichlet_v = np.zeros(n, dtype=bool)
    for tag in mesh.tags:
        if bc[tag].kind == "dirichlet":
            dirichlet_v[mesh.tag_vertices(tag)] = True
    dirichlet_roots = np.unique(root[dirichlet_v])
    dirichlet_v |= np.isin(root, dirichlet_roots)

    roots = np.unique(root[~dirichlet_v])
    dof_of_root = -np.ones(n, dtype=np.int64)
    dof_of_root[roots] = np.arange(len(roots))
    vertex_dof = np.where(dirichlet_v, -1, dof_of_root[root])
    ok = vertex_dof >= 0
    E = sp.csr_matrix((np.ones(ok.sum()), (np.nonzero(ok)[0], vertex_dof[ok])), shape=(n, len(roots)))
    return DofMap(E, vertex_dof, np.nonzero(dirichlet_v)[0])


def assemble(mesh: Mesh2D, mat: MaterialField, bc: BoundarySpec, velocity=None) -> FemMatrices:
    """Assemble ``M_c``, ``M_h``, ``K_sigma`` and ``R_a`` for the mesh and lateral conditions."""
    bc.check(mesh)
    if len(mat.c) != mesh.n_triangles:
        raise ValueError("material field does not match the mesh")
    dofs = build_dofmap(mesh, bc)
    if dofs.n_dofs == 0:
        raise ValueError("no free degrees of freedom left")
    h = np.zeros(mesh.n_vertices) if velocity is None else (
        velocity.h if isinstance(velocity, VelocityField) else np.asarray(velocity, dtype=float))
    return FemMatrices(
        mesh=mesh,
        material=mat,
        bc=bc,
        dofs=dofs,
        M_c_full=_mass(mesh, mat.c),
        M_h_full=_weighted_mass(mesh, h),
        K_sigma_full=_stiffness(mesh, mat.sigma),
        R_a_full=_robin(mesh, bc),
        mass_full=_mass(mesh),
        h=np.array(h, dtype=float),
    )


# -- velocity ---------------------------------------------------------------

def tube_geometry(mesh: Mesh2D, tube_id: int):
    """Center and radius of tube ``tube_id`` recovered from its triangles."""
    sel = mesh.labels == tube_id
    if not np.any(sel):
        raise ValueError(f"unknown tube id {tube_id}")
    area = mesh.areas[sel]
    cen = mesh.vertices[mesh.triangles[sel]].mean(axis=1)
    center = (area[:, None] * cen).sum(axis=0) / area.sum()
    verts = mesh.subdomain_vertices(tube_id)
    radius = float(np.max(np.linalg.norm(mesh.vertices[verts] - center, axis=1)))
    return (float(center[0]), float(center[1])), radius


def tube_flow(mesh: Mesh2D, h, tube_id: int) -> float:
    """P1 quadrature of ``h`` over the triangles of one tube."""
    sel = mesh.labels == tube_id
    hl = np.asarray(h)[mesh.triangles[sel]]
    return float(np.sum(mesh.areas[sel] * hl.mean(axis=1)))


def poiseuille(mesh: Mesh2D, tubes: Sequence) -> VelocityField:
    """Parabolic profiles with prescribed signed total flow per tube.

    ``tubes`` is a sequence of ``(tube_id, Q)``.  Inside a tube of radius R
    centered at x0, ``h = 2Q/(pi R^2) (1 - |x - x0|^2 / R^2)``; the profile
    is then rescaled so that its P1 integral over the tube equals Q.
    """
    h = np.zeros(mesh.n_vertices)
    meta = []
    for tube_id, Q in tubes:
        (cx, cy), R = tube_geometry(mesh, int(tube_id))
        verts = mesh.subdomain_vertices(int(tube_id))
        r2 = ((mesh.vertices[verts] - (cx, cy)) ** 2).sum(axis=1) / R ** 2
        prof = np.clip(1.0 - r2, 0.0, None)
        local = np.zeros(mesh.n_vertices)
        local[verts] = 2.0 * Q / (np.pi * R ** 2) * prof
        if Q != 0.0:
            local *= Q / tube_flow(mesh, local, int(tube_id))
        # walls sit on r = R, so tube supports do not overlap
        h += local
        meta.append(Tube(int(tube_id), (cx, cy), R, float(Q)))
    return VelocityField(h, tuple(meta))


def total_flow(v, fem: FemMatrices) -> float:
    """``int h`` by exact P1 quadrature."""
    h = v.h if isinstance(v, VelocityField) else np.asarray(v, dtype=float)
    return float(np.sum(fem.mass_full @ h))


def classify_case(bc: BoundarySpec, flow: float, h_l1: float = 1.0, tol: float = TOL_BALANCE) -> Case:
    """Sort the problem into one of the four case classes."""
    if bc.constants_controlled:
        return Case(CaseClass.CONSTANTS_CONTROLLED, flow)
    if abs(flow) <= tol * max(h_l1, np.finfo(float).tiny):
        return Case(CaseClass.BALANCED, flow)
    return Case(CaseClass.UNBALANCED_POSITIVE if flow > 0 else CaseClass.UNBALANCED_NEGATIVE, flow)


def case_of(fem: FemMatrices, tol: float = TOL_BALANCE) -> Case:
    flow = total_flow(fem.h, fem)
    h_l1 = float(np.sum(fem.mass_full @ np.abs(fem.h)))
    return classify_case(fem.bc, flow, h_l1, tol)


# -- inverse Laplacian ------------------------------------------------------

class MeanError(ValueError):
    """Source with non-zero mean where the constants are not controlled."""


def laplace_inverse_load(fem: FemMatrices, F_full, tol: float = TOL_BALANCE, scale=None):
    """Nodal ``s`` with ``div(sigma grad s) = f`` given the full load ``F = int f phi_i``.

    Uncontrolled case: ``sum(F)`` must vanish and ``s`` is the zero-mean representative.
    """
    F_full = np.asarray(F_full, dtype=float)
    F = fem.dofs.restrict_load(F_full)
    if not fem.constants_controlled:
        ref = np.sum(np.abs(F_full)) if scale is None else scale
        if abs(F_full.sum()) > tol * max(ref, np.finfo(float).tiny) and abs(F_full.sum()) > 1e-14:
            raise MeanError(f"source has non-zero mean {F_full.sum():.3e}; the constants are not controlled")
    s = fem.dofs.prolong(fem.solve_stiffness(-F))
    if not fem.constants_controlled:
        s = s - fem.integrate(s) / fem.area
    return s


def laplace_inverse(fem: FemMatrices, f, case=None, tol: float = TOL_BALANCE):
    """Nodal ``Delta_sigma^{-1} f`` for a nodal P1 source ``f``."""
    f = np.asarray(f, dtype=float)
    return laplace_inverse_load(fem, fem.mass_full @ f, tol, scale=float(np.sum(fem.mass_full @ np.abs(f))))


def grad_squared(mesh: Mesh2D, h) -> np.ndarray:
    """Per-triangle ``|grad h|^2`` of a P1 field."""
    g, _ = _gradients(mesh)
    gh = np.einsum("mid,mi->md", g, np.asarray(h, dtype=float)[mesh.triangles])
    return (gh ** 2).sum(axis=1)


def p0_load(mesh: Mesh2D, f_tri) -> np.ndarray:
    """Load vector ``int f phi_i`` of a per-triangle constant ``f``."""
    contrib = (np.asarray(f_tri) * mesh.areas / 3.0)[:, None] * np.ones(3)
    return np.bincount(mesh.triangles.ravel(), weights=contrib.ravel(), minlength=mesh.n_vertices)
