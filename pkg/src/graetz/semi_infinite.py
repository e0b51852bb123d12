"""
Axial solutions as exponential series, and the semi-infinite duct.

A solution is stored as

    T(z) = sum_i d-_i U_-i exp(lam_-i (z - z-)) + sum_i d+_i U_+i exp(lam_+i (z - z+))
           + c1 + c2 (z + Delta_sigma^{-1} h)

with offsets chosen so that every stored exponential is at most one on the
domain.  On the semi-infinite duct ``z >= 0`` only decaying modes appear.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import CaseClass
from .decomp import Decomposer, IncompatibleDataError
from .spectral import SpectralBasis


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class AxialSolution:
    basis: SpectralBasis
    d_neg: np.ndarray
    d_pos: np.ndarray
    z_neg: float = 0.0
    z_pos: float = 0.0
    c1: float = 0.0
    c2: float = 0.0
    domain: tuple = (0.0, np.inf)
    T_inf: float | None = None
    info: dict = field(default_factory=dict)

    def _check(self, z):
        lo, hi = self.domain
        tol = 1e-12 * max(1.0, abs(lo) if np.isfinite(lo) else 1.0, abs(hi) if np.isfinite(hi) else 1.0)
        if not (lo - tol <= z <= hi + tol):
            raise DomainError(f"z={z} outside the solution domain [{lo}, {hi}]")

    def _series(self, z, power: int):
        b = self.basis
        out = np.zeros(b.fem.mesh.n_vertices)
        if len(self.d_neg):
            w = self.d_neg * b.lam_neg[: len(self.d_neg)] ** power * np.exp(b.lam_neg[: len(self.d_neg)] * (z - self.z_neg))
            out += b.U_neg[:, : len(self.d_neg)] @ w
        if len(self.d_pos):
            w = self.d_pos * b.lam_pos[: len(self.d_pos)] ** power * np.exp(b.lam_pos[: len(self.d_pos)] * (z - self.z_pos))
            out += b.U_pos[:, : len(self.d_pos)] @ w
        return out

    def _w(self):
        return self.basis.Phi_tilde[0]

    def evaluate(self, z: float) -> np.ndarray:
        """Nodal temperature ``T(z)``."""
        self._check(z)
        T = self._series(z, 0) + self.c1
        if self.c2:
            T = T + self.c2 * (z + self._w())
        return T

    def evaluate_dz(self, z: float) -> np.ndarray:
        self._check(z)
        return self._series(z, 1) + self.c2

    def evaluate_dzz(self, z: float) -> np.ndarray:
        self._check(z)
        return self._series(z, 2)

    def far_field(self, z: float) -> np.ndarray:
        """Non-decaying part ``c1 + c2 (z + Delta^{-1} h)``."""
        n = self.basis.fem.mesh.n_vertices
        out = np.full(n, self.c1)
        if self.c2:
            out = out + self.c2 * (z + self._w())
        return out

    def weak_residual(self, z: float) -> float:
        """Relative weak residual of ``c T'' + div(sigma grad T) - h T' = 0`` at ``z``.

        Tested against the dof space: ``M_c T'' - K T - M_h T'``, scaled by
        the sum of the norms of the three terms.
        """
        fem = self.basis.fem
        T, dT, ddT = self.evaluate(z), self.evaluate_dz(z), self.evaluate_dzz(z)
        terms = [fem.dofs.restrict_load(A @ v) for A, v in
                 ((fem.M_c_full, ddT), (fem.K_full, T), (fem.M_h_full, dT))]
        r = terms[0] - terms[1] - terms[2]
        scale = sum(np.linalg.norm(t) for t in terms)
        return float(np.linalg.norm(r) / scale) if scale > 0 else 0.0


def _zero(b):
    return np.zeros(0)


def solve_semi_dirichlet(T0, dec: Decomposer, T_inf: float | None = None, c2: float = 0.0) -> AxialSolution:
    """Duct ``z >= 0`` with prescribed temperature ``T(0) = T0``.

    ``T_inf`` is a free input only when ``int h < 0``; ``c2`` only in the
    balanced case.  Passing them elsewhere raises ``ValueError``.
    """
    T0 = np.asarray(T0, dtype=float)
    basis = dec.basis
    kind = basis.case.kind
    one = np.ones_like(T0)
    c1 = 0.0
    if kind is not CaseClass.BALANCED and c2:
        raise ValueError("c2 is a free parameter only in the balanced case")
    if kind is CaseClass.CONSTANTS_CONTROLLED:
        if T_inf:
            raise ValueError("the temperature at infinity is 0 when the constants are controlled")
        rhs, T_inf = T0, 0.0
    elif kind is CaseClass.UNBALANCED_POSITIVE:
        if T_inf is not None:
            raise ValueError("T_inf is determined by the inlet data when int h > 0")
        us = dec.u_star(-1)
        T_inf = dec.c_inner(us, T0) / dec.c_inner(us, one)
        c1, rhs = T_inf, T0 - T_inf
    elif kind is CaseClass.UNBALANCED_NEGATIVE:
        T_inf = 0.0 if T_inf is None else float(T_inf)
        c1, rhs = T_inf, T0 - T_inf
    else:
        if T_inf is not None:
            raise ValueError("in the balanced case the far field is set by c2, not T_inf")
        us = dec.u_star(-1)
        w = basis.Phi_tilde[0]
        c1 = dec.c_inner(us, T0 - c2 * w) / dec.c_inner(us, one)
        rhs = T0 - c1 - c2 * w
        T_inf = None
    d = dec.B(-1, rhs)
    return AxialSolution(basis, d, _zero(basis), 0.0, 0.0, c1, float(c2), (0.0, np.inf), T_inf,
                         {"io": "dirichlet", "case": kind.value})


def solve_semi_neumann(S0, dec: Decomposer, T_inf: float | None = None, c1: float | None = None) -> AxialSolution:
    """Duct ``z >= 0`` with prescribed flux ``dT/dz(0) = S0``.

    When ``int h > 0`` the data must satisfy ``(u_-|S0) = 0`` (the decaying
    family is one mode short) and ``T_inf`` is free; when ``int h < 0`` every
    flux is admissible and ``T_inf`` is again free.  In the balanced case
    ``c1`` is free and ``c2`` follows from the data.
    """
    S0 = np.asarray(S0, dtype=float)
    basis = dec.basis
    kind = basis.case.kind
    one = np.ones_like(S0)
    c2 = 0.0
    const = 0.0
    if kind is CaseClass.CONSTANTS_CONTROLLED:
        if T_inf or c1:
            raise ValueError("no free constant when the constants are controlled")
        rhs = S0
    elif kind is CaseClass.BALANCED:
        if T_inf is not None:
            raise ValueError("in the balanced case the free constant is c1")
        us = dec.u_star(-1)
        c2 = dec.c_inner(us, S0) / dec.c_inner(us, one)
        rhs = S0 - c2
        const = 0.0 if c1 is None else float(c1)
    else:
        if c1 is not None:
            raise ValueError("in the unbalanced cases the free constant is T_inf")
        const = 0.0 if T_inf is None else float(T_inf)
        rhs = S0
        if kind is CaseClass.UNBALANCED_POSITIVE:
            res, cos = dec.compat_residual(-1, S0)
            if cos > dec.tol_compat:
                raise IncompatibleDataError(
                    f"Neumann data violates (u_-|S0) = 0: residual {res:.3e} (cosine {cos:.3e})", res)
    e = dec.B(-1, rhs)
    d = e / basis.lam_neg
    T_inf_out = None if kind is CaseClass.BALANCED else const
    return AxialSolution(basis, d, _zero(basis), 0.0, 0.0, const, c2, (0.0, np.inf), T_inf_out,
                         {"io": "neumann", "case": kind.value})


def evaluate(sol: AxialSolution, z: float) -> np.ndarray:
    return sol.evaluate(z)


def evaluate_dz(sol: AxialSolution, z: float) -> np.ndarray:
    return sol.evaluate_dz(z)
