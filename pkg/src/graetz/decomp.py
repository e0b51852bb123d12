"""
Projections and the B operators in the truncated eigenbasis.

For a state ``phi = (u, 0)`` only the c-weighted pairings ``b_j = int c U_j u``
matter, since ``(phi_j | P phi)_H = int c U_j u``.  The operator ``B_-``
restricted to the truncated negative family solves ``W d = b`` with the Gram
matrix ``W_ij = int c U_i U_j``; ``P B_- (u, 0)`` is then the c-weighted L2
projection of ``u`` onto ``span{U_-i}``.  The positive side is symmetric.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from .assembly import CaseClass
from .spectral import SpectralBasis

TOL_COMPAT = 1e-6


class SingularGramError(np.linalg.LinAlgError):
    """The truncated Gram matrix is not positive definite."""


class IncompatibleDataError(ValueError):
    """Data violates the compatibility condition of an uncontrolled case."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class GramP:
    """Gram matrix of ``{P phi_i}`` for one sign and its Cholesky factor."""

    sign: int
    W: np.ndarray
    factor: tuple

    def solve(self, b):
        return sla.cho_solve(self.factor, b)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.W)


def gram_P(basis: SpectralBasis, sign: int) -> GramP:
    _, U, _ = basis.modes(sign)
    MU = basis.fem.M_c_full @ U
    W = U.T @ MU
    W = (W + W.T) / 2
    try:
        factor = sla.cho_factor(W, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(f"Gram matrix of the {'negative' if sign < 0 else 'positive'} family "
                                "is not positive definite; truncation or conditioning failure") from exc
    return GramP(sign, W, factor)


def gram_lower_bound(basis: SpectralBasis, sign: int = -1) -> float:
    """Lower bound ``|lam| / (2|lam| + |h|_inf)`` on the Gram spectrum, ``lam`` closest to zero."""
    lam = basis.modes(sign)[0][0]
    return abs(lam) / (2 * abs(lam) + float(np.max(np.abs(basis.fem.h))))


@dataclass(frozen=True)
class DecompResult:
    """Coefficients of ``psi`` on one sign family, plus an optional kernel part."""

    sign: int
    coeffs: np.ndarray
    kernel: float | None = None
    residual: float = 0.0
    compatible: bool = True

    def state(self, basis: SpectralBasis):
        u, s = basis.state(self.coeffs, self.sign)
        if self.kernel:
            u = u + self.kernel * basis.phi0[0]
            s = s + self.kernel * basis.phi0[1]
        return u, s

    def trace(self, basis: SpectralBasis):
        """First component of ``psi``, that is ``P psi``."""
        return self.state(basis)[0]


class Decomposer:
    """Everything needed to apply ``B_-`` and ``B_+`` on a fixed basis.

    Gram factorisations and the vectors ``u_- = Phi - P B_- Phi`` and
    ``u_+ = Phi - P B_+ Phi`` are computed once and reused.
    """

    def __init__(self, basis: SpectralBasis, tol_compat: float = TOL_COMPAT):
        self.basis = basis
        self.tol_compat = tol_compat
        self.grams = {-1: gram_P(basis, -1), 1: gram_P(basis, 1)}
        self._ustar = {}
        self._cache = {}

    @property
    def fem(self):
        return self.basis.fem

    @property
    def case(self):
        return self.basis.case

    def pair(self, sign: int, u) -> np.ndarray:
        """``b_j = int c U_j u`` for the family of the given sign."""
        _, U, _ = self.basis.modes(sign)
        return U.T @ (self.fem.M_c_full @ u)

    def c_inner(self, u, v) -> float:
        return float(u @ (self.fem.M_c_full @ v))

    def B(self, sign: int, u) -> np.ndarray:
        """Coefficients of ``B_sign (u, 0)``."""
        return self.grams[sign].solve(self.pair(sign, u))

    def project(self, sign: int, u) -> np.ndarray:
        """Nodal ``P B_sign (u, 0)``."""
        _, U, _ = self.basis.modes(sign)
        return U @ self.B(sign, u)

    def u_star(self, sign: int) -> np.ndarray:
        if sign not in self._ustar:
            one = np.ones(self.fem.mesh.n_vertices)
            self._ustar[sign] = one - self.project(sign, one)
        return self._ustar[sign]

    def needs_compat(self, sign: int) -> bool:
        """Whether one side's family is one mode short of decomposing every trace.

        The decaying family (``sign=-1``) is short when ``int h > 0``; the
        growing family when ``int h < 0``.
        """
        k = self.case.kind
        if sign < 0:
            return k is CaseClass.UNBALANCED_POSITIVE
        return k is CaseClass.UNBALANCED_NEGATIVE

    def compat_residual(self, sign: int, u) -> tuple:
        """``(u_sign | u)`` and its cosine relative to ``|u_sign| |u|``."""
        us = self.u_star(sign)
        r = self.c_inner(us, u)
        den = np.sqrt(self.c_inner(us, us) * max(self.c_inner(u, u), 0.0))
        return r, (abs(r) / den if den > 0 else 0.0)

    def decompose(self, u, sign: int = -1) -> DecompResult:
        """Find ``psi`` with ``P psi = (u, 0)`` supported on one sign family (plus kernel)."""
        u = np.asarray(u, dtype=float)
        kind = self.case.kind
        res, cos = self.compat_residual(sign, u)
        if kind is CaseClass.BALANCED:
            alpha = res / self.c_inner(self.u_star(sign), np.ones_like(u))
            coeffs = self.B(sign, u) - alpha * self.B(sign, np.ones_like(u))
            return DecompResult(sign, coeffs, kernel=alpha, residual=0.0)
        ok = (not self.needs_compat(sign)) or cos <= self.tol_compat
        return DecompResult(sign, self.B(sign, u), residual=res, compatible=ok)

    def norm_half(self, coeffs, sign: int) -> float:
        """``|.|_{1/2}`` of a state with the given modal coefficients."""
        lam = self.basis.modes(sign)[0]
        return float(np.sqrt(np.sum(np.abs(lam) * coeffs ** 2)))


def u_star(sign: int, dec: Decomposer) -> np.ndarray:
    return dec.u_star(sign)


def solve_B(sign: int, phi_u, dec: Decomposer) -> DecompResult:
    return DecompResult(sign, dec.B(sign, phi_u))


def decompose(phi_u, dec: Decomposer, sign: int = -1) -> DecompResult:
    return dec.decompose(phi_u, sign)
