"""
Discrete two-component operator and its eigenbasis.

States are pairs ``(u, s)`` of nodal fields (``u`` plays the role of
``dT/dz`` and ``s`` of ``T``).  The inner product is
``(x|y)_H = u.M_c.u' + s.K.s'`` with ``K = K_sigma + R_a``.  In dof space
the operator is represented by the symmetric pencil

    S = [[M_h, K], [K, 0]],    G = [[M_c, 0], [0, K]],

so that ``A = G^{-1} S`` and ``S x = lam G x`` is the eigenproblem.  When
the constants are not controlled, the ``s`` block is restricted to a
complement of the constants (one dof pinned), which realises the quotient
space without touching sparsity.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import Case, CaseClass, FemMatrices, laplace_inverse, laplace_inverse_load

log = logging.getLogger(__name__)

DENSE_LIMIT = 1200
CLUSTER_RTOL = 1e-8
KERNEL_RTOL = 1e-9


class EigenError(RuntimeError):
    pass


class RangeError(ValueError):
    """State not in the range of the operator (balanced case, not orthogonal to the kernel)."""


@dataclass(frozen=True)
class Pencil:
    S: sp.csr_matrix
    G: sp.csr_matrix
    fem: FemMatrices
    case: Case
    keep_s: np.ndarray

    @property
    def n_u(self) -> int:
        return self.fem.dofs.n_dofs

    @property
    def n_s(self) -> int:
        return len(self.keep_s)

    def split(self, x):
        """Nodal ``(u, s)`` of a pencil vector; ``s`` is zero-mean when constants are free."""
        fem = self.fem
        u = fem.dofs.prolong(x[: self.n_u])
        s_dof = np.zeros(self.n_u)
        s_dof[self.keep_s] = x[self.n_u:]
        s = fem.dofs.prolong(s_dof)
        if not fem.constants_controlled:
            s = s - fem.integrate(s) / fem.area
        return u, s

    def join(self, u, s):
        """Pencil vector of a nodal state (values read at dof representatives)."""
        d = self.fem.dofs
        s_dof = d.from_nodal(s)
        pin = self.fem.pin()
        if pin is not None:
            s_dof = s_dof - s_dof[pin]
        return np.concatenate([d.from_nodal(u), s_dof[self.keep_s]])


def build_pencil(fem: FemMatrices, case: Case) -> Pencil:
    n = fem.dofs.n_dofs
    keep = np.arange(n)
    if not fem.constants_controlled:
        keep = keep[keep != fem.pin()]
    K = fem.K
    Ks = K[:, keep]
    S = sp.bmat([[fem.M_h, Ks], [Ks.T, None]], format="csr")
    G = sp.bmat([[fem.M_c, None], [None, K[keep][:, keep]]], format="csr")
    S = ((S + S.T) * 0.5).tocsr()
    G = ((G + G.T) * 0.5).tocsr()
    return Pencil(S, G, fem, case, keep)


def h_inner(fem: FemMatrices, x, y) -> float:
    """``(x|y)_H`` for nodal states ``x = (u, s)``, ``y = (u', s')``."""
    (u, s), (v, t) = x, y
    return float(u @ (fem.M_c_full @ v) + s @ (fem.K_full @ t))


def h_norm(fem: FemMatrices, x) -> float:
    return float(np.sqrt(max(h_inner(fem, x, x), 0.0)))


def zero_state(fem):
    n = fem.mesh.n_vertices
    return np.zeros(n), np.zeros(n)


@dataclass(frozen=True)
class SpectralBasis:
    """H-orthonormal eigenpairs nearest zero, split by sign.

    ``lam_neg`` runs ``lam_{-1} > lam_{-2} > ...`` (closest to zero first),
    ``lam_pos`` runs ``lam_1 < lam_2 < ...``.  Columns of ``U_*`` / ``S_*``
    are the nodal ``u`` and ``s`` parts of the eigenvectors.
    """

    pencil: Pencil
    lam_neg: np.ndarray
    U_neg: np.ndarray
    S_neg: np.ndarray
    lam_pos: np.ndarray
    U_pos: np.ndarray
    S_pos: np.ndarray
    phi0: tuple | None = None
    kernel_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def fem(self) -> FemMatrices:
        return self.pencil.fem

    @property
    def case(self) -> Case:
        return self.pencil.case

    def modes(self, sign: int):
        if sign < 0:
            return self.lam_neg, self.U_neg, self.S_neg
        return self.lam_pos, self.U_pos, self.S_pos

    def truncate(self, n_neg: int, n_pos: int) -> "SpectralBasis":
        return SpectralBasis(
            self.pencil,
            self.lam_neg[:n_neg], self.U_neg[:, :n_neg], self.S_neg[:, :n_neg],
            self.lam_pos[:n_pos], self.U_pos[:, :n_pos], self.S_pos[:, :n_pos],
            self.phi0, self.kernel_values,
        )

    @property
    def Phi(self):
        n = self.fem.mesh.n_vertices
        return np.ones(n), np.zeros(n)

    @property
    def Phi_tilde(self):
        """``(Delta_sigma^{-1} h, 0)``; undefined for the unbalanced uncontrolled cases."""
        if self.case.kind in (CaseClass.UNBALANCED_POSITIVE, CaseClass.UNBALANCED_NEGATIVE):
            raise ValueError("Delta_sigma^{-1} h is not defined when int h != 0 and constants are free")
        return laplace_inverse(self.fem, self.fem.h), np.zeros(self.fem.mesh.n_vertices)

    @property
    def phi0_norm2(self) -> float:
        return h_inner(self.fem, self.phi0, self.phi0) if self.phi0 is not None else 0.0

    def coeffs(self, x, sign: int) -> np.ndarray:
        """``(phi_i | x)_H`` for the modes of one sign."""
        _, U, S = self.modes(sign)
        u, s = x
        fem = self.fem
        return U.T @ (fem.M_c_full @ u) + S.T @ (fem.K_full @ s)

    def state(self, coeffs, sign: int):
        """``sum_i coeffs_i phi_i`` as a nodal state."""
        _, U, S = self.modes(sign)
        return U @ coeffs, S @ coeffs

    def residuals(self) -> np.ndarray:
        """``|S phi - lam G phi| / |G phi|`` for every stored pair (neg then pos)."""
        p = self.pencil
        out = []
        for sign in (-1, 1):
            lam, U, S = self.modes(sign)
            for k in range(len(lam)):
                x = p.join(U[:, k], S[:, k])
                gx = p.G @ x
                out.append(np.linalg.norm(p.S @ x - lam[k] * gx) / np.linalg.norm(gx))
        return np.array(out)


# -- eigen solve ------------------------------------------------------------

def _orthonormalize(X, lam, G):
    """G-orthonormalise eigenvectors, symmetrically inside near-degenerate clusters."""
    order = np.argsort(lam)
    lam, X = lam[order], X[:, order]
    scale = max(np.max(np.abs(lam)), np.finfo(float).tiny)
    start = 0
    for k in range(1, len(lam) + 1):
        if k == len(lam) or abs(lam[k] - lam[k - 1]) > CLUSTER_RTOL * scale:
            blk = X[:, start:k]
            gram = blk.T @ (G @ blk)
            w, V = np.linalg.eigh((gram + gram.T) / 2)
            X[:, start:k] = blk @ (V / np.sqrt(w)) @ V.T
            start = k
    return lam, X


def _dense_eig(S, G):
    w, V = sla.eigh(S.toarray(), G.toarray())
    return w, V


def _sparse_eig(S, G, k, sigma):
    w, V = spla.eigsh(S.tocsc(), k=k, M=G.tocsc(), sigma=sigma, which="LM", tol=0.0)
    return w, V


def eigensolve(p: Pencil, n_neg: int = 50, n_pos: int = 50, dense: bool | None = None) -> SpectralBasis:
    """Eigenpairs of the pencil closest to zero: ``n_neg`` negative, ``n_pos`` positive."""
    if n_neg < 1 or n_pos < 1:
        raise ValueError("n_neg and n_pos must be at least 1")
    dim = p.S.shape[0]
    fem = p.fem
    balanced = p.case.kind is CaseClass.BALANCED
    if dense is None:
        dense = dim <= DENSE_LIMIT or 2 * (n_neg + n_pos) + 20 >= dim

    if dense:
        lam, X = _dense_eig(p.S, p.G)
    else:
        # lam scale ~ sqrt(K/M); shift off zero only when a kernel is expected
        scale = np.sqrt(abs(p.G.diagonal()[p.n_u:]).mean() / abs(p.G.diagonal()[: p.n_u]).mean())
        sigma = -1e-6 * scale if balanced else 0.0
        k = min(dim - 2, n_neg + n_pos + max(10, (n_neg + n_pos) // 5) + (1 if balanced else 0))
        while True:
            try:
                lam, X = _sparse_eig(p.S, p.G, k, sigma)
            except spla.ArpackNoConvergence as exc:
                raise EigenError(f"eigensolver did not converge: {exc}") from exc
            nz = np.abs(lam) > KERNEL_RTOL * np.max(np.abs(lam))
            # the extreme computed values on each side may be missing neighbours: keep a margin
            n_have_neg = np.sum(lam[nz] < 0)
            n_have_pos = np.sum(lam[nz] > 0)
            if (n_have_neg > n_neg and n_have_pos > n_pos) or k >= dim - 2:
                break
            k = min(dim - 2, int(k * 1.5) + 10)
            log.debug("eigensolve: enlarging k to %d", k)

    lam, X = _orthonormalize(np.asarray(X, float), np.asarray(lam, float), p.G)
    is_kernel = np.abs(lam) <= KERNEL_RTOL * np.max(np.abs(lam))
    kernel_vals = lam[is_kernel]
    if len(kernel_vals) and not balanced:
        raise EigenError(f"zero eigenvalue {kernel_vals[0]:.3e} found but the case is {p.case.kind.value}")
    if balanced and dense and len(kernel_vals) != 1:
        raise EigenError(f"balanced case should have a one-dimensional kernel, found {len(kernel_vals)}")

    neg = np.nonzero((lam < 0) & ~is_kernel)[0][::-1]
    pos = np.nonzero((lam > 0) & ~is_kernel)[0]
    if len(neg) < n_neg or len(pos) < n_pos:
        raise ValueError(f"requested {n_neg}/{n_pos} modes but the spectrum offers {len(neg)}/{len(pos)}")
    neg, pos = neg[:n_neg], pos[:n_pos]

    def unpack(idx):
        U = np.empty((fem.mesh.n_vertices, len(idx)))
        Sx = np.empty_like(U)
        for j, k in enumerate(idx):
            u, s = p.split(X[:, k])
            # deterministic sign: largest |u| entry positive
            if u[np.argmax(np.abs(u))] < 0:
                u, s = -u, -s
            U[:, j], Sx[:, j] = u, s
        return lam[idx], U, Sx

    ln, Un, Sn = unpack(neg)
    lp, Up, Sp = unpack(pos)
    phi0 = None
    if balanced:
        phi0 = (np.ones(fem.mesh.n_vertices), laplace_inverse(fem, fem.h))
    return SpectralBasis(p, ln, Un, Sn, lp, Up, Sp, phi0, kernel_vals)


# -- operator actions -------------------------------------------------------

def apply_A(fem: FemMatrices, x):
    """Weak action ``G^{-1} S x`` on a nodal state whose ``u`` lies in the dof space."""
    u, s = x
    F = fem.dofs.restrict_load(fem.M_h_full @ u + fem.K_full @ s)
    yu = fem.dofs.prolong(fem.solve_mass_c(F))
    ys = np.array(u, dtype=float)
    if not fem.constants_controlled:
        ys = ys - fem.integrate(ys) / fem.area
    return yu, ys


def apply_A_inverse(basis: SpectralBasis, x, rtol: float = 1e-8):
    """``A^{-1} x`` with the additive constant fixed as for the three case classes."""
    fem = basis.fem
    u, s = (np.asarray(v, dtype=float) for v in x)
    kind = basis.case.kind
    if kind is CaseClass.CONSTANTS_CONTROLLED:
        ys = laplace_inverse_load(fem, fem.M_h_full @ s - fem.M_c_full @ u)
        return s.copy(), ys
    flow = float(np.sum(fem.mass_full @ fem.h))
    if kind is CaseClass.BALANCED:
        phi0 = basis.phi0
        n0 = np.sqrt(basis.phi0_norm2)
        if abs(h_inner(fem, x, phi0)) > rtol * max(h_norm(fem, x), 1e-300) * n0:
            raise RangeError("state is not orthogonal to the kernel vector")
        load = fem.M_h_full @ s - fem.M_c_full @ u
        ys = laplace_inverse_load(fem, load - load.sum() * 0.0)
        y = (s.copy(), ys)
        k = -h_inner(fem, y, phi0) / basis.phi0_norm2
        return y[0] + k * phi0[0], y[1] + k * phi0[1]
    ones = np.ones_like(u)
    k = (fem.integrate_c(u) - float(s @ (fem.M_h_full @ ones))) / flow
    load = fem.M_h_full @ (s + k) - fem.M_c_full @ u
    return s + k, laplace_inverse_load(fem, load)


def P(x):
    """Projection ``(u, s) -> (u, 0)``."""
    u, s = x
    return np.array(u, dtype=float), np.zeros_like(s)


def relative_deviation(fem: FemMatrices, U) -> float:
    """``|U - mean(U)|_L2 / |U|_L2`` of a nodal field."""
    mean = fem.integrate(U) / fem.area
    d = U - mean
    return float(np.sqrt((d @ (fem.mass_full @ d)) / (U @ (fem.mass_full @ U))))
