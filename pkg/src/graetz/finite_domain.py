"""
Finite ducts ``Omega x [-L, L]``.

The temperature is sought as

    T(z) = sum_i d-_i U_-i exp(lam_-i (z + L)) + sum_i d+_i U_+i exp(lam_+i (z - L))
           + c1 + c2 (z + Delta_sigma^{-1} h),

so every stored exponential is at most one on the domain.  Writing the
inlet/outlet conditions at ``z = -L`` and ``z = +L``, testing them against
``{U_-j}`` and ``{U_+j}`` (scaled by the inverse Gram matrices) and, where a
family is one mode short, against ``u_-`` and ``u_+`` yields a dense system
``Z X = b`` whose diagonal blocks are identities and whose off-diagonal
blocks are the operators ``M_+`` and ``M_-``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import CaseClass
from .decomp import TOL_COMPAT, Decomposer, IncompatibleDataError
from .semi_infinite import AxialSolution

log = logging.getLogger(__name__)


class SingularSystemError(np.linalg.LinAlgError):
    pass


class SeriesDivergenceError(RuntimeError):
    pass


# -- the operator M -----------------------------------------------------------

@dataclass(frozen=True)
class MOperator:
    """``M_+ = P e^{-2LA} B_+`` and ``M_- = P e^{2LA} B_-`` in coefficient space.

    ``M_plus`` maps positive-family coefficients to negative-family ones,
    ``M_minus`` the other way round.
    """

    L: float
    M_plus: np.ndarray
    M_minus: np.ndarray
    lam_min: float

    @property
    def matrix(self) -> np.ndarray:
        n, p = self.M_plus.shape
        out = np.zeros((n + p, n + p))
        out[:n, n:] = self.M_plus
        out[n:, :n] = self.M_minus
        return out

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)

    def spectral_radius(self) -> float:
        # eigenvalues of [[0, A], [B, 0]] are the square roots of those of AB
        ev = np.linalg.eigvals(self.M_plus @ self.M_minus)
        return float(np.sqrt(np.max(np.abs(ev)))) if ev.size else 0.0

    def apply(self, x):
        n = self.M_plus.shape[0]
        return np.concatenate([self.M_plus @ x[n:], self.M_minus @ x[:n]])


def cross_gram(dec: Decomposer) -> np.ndarray:
    """``C_ji = int c U_-j U_+i``."""
    b = dec.basis
    if "C" not in dec._cache:
        dec._cache["C"] = b.U_neg.T @ (b.fem.M_c_full @ b.U_pos)
    return dec._cache["C"]


def assemble_M(L: float, dec: Decomposer) -> MOperator:
    if L < 0:
        raise ValueError("L must be nonnegative")
    b = dec.basis
    C = cross_gram(dec)
    Ep = np.exp(-2 * L * b.lam_pos)
    Em = np.exp(2 * L * b.lam_neg)
    M_plus = dec.grams[-1].solve(C * Ep[None, :])
    M_minus = dec.grams[1].solve(C.T * Em[None, :])
    return MOperator(float(L), M_plus, M_minus, float(min(b.lam_pos[0], -b.lam_neg[0])))


def spectral_radius(m: MOperator) -> float:
    return m.spectral_radius()


# -- Z systems ----------------------------------------------------------------

@dataclass(frozen=True)
class ZSystem:
    Z: np.ndarray
    b: np.ndarray
    layout: dict          # unknown name -> slice
    rows: dict            # row block name -> slice
    io: str
    L: float
    dec: Decomposer = field(repr=False)
    M: MOperator = field(repr=False)
    c1: float = 0.0       # fixed value of the free constant (Neumann, uncontrolled)

    @property
    def square(self) -> bool:
        return self.Z.shape[0] == self.Z.shape[1]

    @property
    def n_block(self) -> int:
        return self.layout["d_neg"].stop - self.layout["d_neg"].start + self.layout["d_pos"].stop - self.layout["d_pos"].start

    def residual(self, X) -> float:
        nb = np.linalg.norm(self.b)
        r = np.linalg.norm(self.Z @ X - self.b)
        return float(r / nb) if nb > 0 else float(r)


def _scalars(dec: Decomposer, io: str):
    """Scalar unknowns and extra test rows for the case and I/O kind."""
    kind = dec.case.kind
    cols, rows = [], []
    if kind is CaseClass.UNBALANCED_POSITIVE:
        rows = ["u_neg"]
    elif kind is CaseClass.UNBALANCED_NEGATIVE:
        rows = ["u_pos"]
    elif kind is CaseClass.BALANCED:
        rows = ["u_neg", "u_pos"]
    if io == "dirichlet":
        if kind is not CaseClass.CONSTANTS_CONTROLLED:
            cols.append("c1")
        if kind is CaseClass.BALANCED:
            cols.append("c2")
    elif kind is CaseClass.BALANCED:
        cols.append("c2")
    return cols, rows


def face_columns(dec: Decomposer, L: float, io: str, z_sign: int, cols):
    """Nodal trace (Dirichlet) or flux (Neumann) at ``z = z_sign * L`` per unknown.

    Neumann unknowns are ``e = lam d``, so modal columns are the same in
    both cases; only the scalar columns differ.
    """
    b = dec.basis
    if z_sign < 0:
        Fn = b.U_neg
        Fp = b.U_pos * np.exp(-2 * L * b.lam_pos)[None, :]
    else:
        Fn = b.U_neg * np.exp(2 * L * b.lam_neg)[None, :]
        Fp = b.U_pos
    n = b.fem.mesh.n_vertices
    extra = []
    for c in cols:
        if c == "c1":
            extra.append(np.ones(n))
        elif io == "dirichlet":
            extra.append(z_sign * L + b.Phi_tilde[0])
        else:
            extra.append(np.ones(n))
    return np.hstack([Fn, Fp] + [e[:, None] for e in extra])


def _assemble_Z(dec: Decomposer, data_minus, data_plus, L: float, io: str, c1: float = 0.0) -> ZSystem:
    if L <= 0:
        raise ValueError("L must be positive")
    b = dec.basis
    Mc = b.fem.M_c_full
    cols, srows = _scalars(dec, io)
    Fm = face_columns(dec, L, io, -1, cols)
    Fp = face_columns(dec, L, io, 1, cols)
    gm = Mc @ np.asarray(data_minus, dtype=float)
    gp = Mc @ np.asarray(data_plus, dtype=float)
    McFm, McFp = Mc @ Fm, Mc @ Fp
    blocks = [dec.grams[-1].solve(b.U_neg.T @ McFm), dec.grams[1].solve(b.U_pos.T @ McFp)]
    rhs = [dec.grams[-1].solve(b.U_neg.T @ gm), dec.grams[1].solve(b.U_pos.T @ gp)]
    for r in srows:
        sign = -1 if r == "u_neg" else 1
        us = dec.u_star(sign)
        scale = np.sqrt(dec.c_inner(us, us))
        MF, g = (McFm, gm) if sign < 0 else (McFp, gp)
        blocks.append((us @ MF)[None, :] / scale)
        rhs.append(np.array([us @ g]) / scale)
    Z = np.vstack(blocks)
    rhs = np.concatenate(rhs)
    nn, npp = len(b.lam_neg), len(b.lam_pos)
    layout = {"d_neg": slice(0, nn), "d_pos": slice(nn, nn + npp)}
    for k, c in enumerate(cols):
        layout[c] = slice(nn + npp + k, nn + npp + k + 1)
    rows = {"neg": slice(0, nn), "pos": slice(nn, nn + npp)}
    for k, r in enumerate(srows):
        rows[r] = slice(nn + npp + k, nn + npp + k + 1)
    return ZSystem(Z, rhs, layout, rows, io, float(L), dec, assemble_M(L, dec), c1)


def assemble_Z_dirichlet(T_minus, T_plus, L: float, dec: Decomposer) -> ZSystem:
    """Prescribed temperatures ``T(-L) = T_minus`` and ``T(L) = T_plus``."""
    return _assemble_Z(dec, T_minus, T_plus, L, "dirichlet")


def assemble_Z_neumann(S_minus, S_plus, L: float, dec: Decomposer, c1: float = 0.0) -> ZSystem:
    """Prescribed fluxes ``dT/dz(-L) = S_minus`` and ``dT/dz(L) = S_plus``.

    When the constants are not controlled ``c1`` is arbitrary; it is set to
    the given value.
    """
    if dec.case.controlled and c1:
        raise ValueError("no free constant when the constants are controlled")
    return _assemble_Z(dec, S_minus, S_plus, L, "neumann", c1)


def neumann_series(M: MOperator, rhs, max_k: int = 10_000, tol: float = 1e-15):
    """``(Id + M)^{-1} rhs`` as ``sum_k (-M)^k rhs``; ``rhs`` may have several columns."""
    rho = M.spectral_radius()
    if rho >= 1:
        raise SeriesDivergenceError(f"spectral radius of M is {rho:.4f} >= 1; the series diverges")
    rhs = np.asarray(rhs, dtype=float)
    n = M.M_plus.shape[0]
    term = rhs.copy()
    out = rhs.copy()
    for _ in range(max_k):
        term = -np.concatenate([M.M_plus @ term[n:], M.M_minus @ term[:n]])
        out += term
        if np.linalg.norm(term) <= tol * max(np.linalg.norm(out), np.finfo(float).tiny):
            return out
    raise SeriesDivergenceError(f"Neumann series did not converge in {max_k} terms (rho={rho:.4f})")


@dataclass(frozen=True)
class ZSolution:
    X: np.ndarray
    residual: float
    cond: float
    method: str


def solve_Z_raw(zs: ZSystem, method: str = "direct", max_k: int = 10_000, tol: float = 1e-15,
                tol_compat: float = TOL_COMPAT) -> ZSolution:
    Z, rhs = zs.Z, zs.b
    if method == "direct":
        cond = float(np.linalg.cond(Z))
        if zs.square:
            if not np.isfinite(cond) or cond > 1e14:
                raise SingularSystemError(f"Z is numerically singular (condition {cond:.3e})")
            X = sla.solve(Z, rhs)
        else:
            X = sla.lstsq(Z, rhs)[0]
    elif method == "neumann_series":
        nb = zs.n_block
        B = Z[:nb, nb:]
        R = Z[nb:, :nb]
        D = Z[nb:, nb:]
        y = neumann_series(zs.M, rhs[:nb], max_k, tol)
        if B.shape[1] or R.shape[0]:
            Y = neumann_series(zs.M, B, max_k, tol) if B.shape[1] else np.zeros((nb, 0))
            S = D - R @ Y
            r = rhs[nb:] - R @ y
            xs = sla.lstsq(S, r)[0] if S.size else np.zeros(0)
            X = np.concatenate([y - Y @ xs, xs])
        else:
            X = y
        cond = float("nan")
    else:
        raise ValueError(f"unknown method {method!r}")
    res = zs.residual(X)
    if not zs.square and res > tol_compat:
        raise IncompatibleDataError(
            f"{zs.io} data violates the compatibility condition: relative residual {res:.3e}", res)
    return ZSolution(X, res, cond, method)


def to_solution(zs: ZSystem, X) -> AxialSolution:
    b = zs.dec.basis
    L = zs.L
    d_neg = X[zs.layout["d_neg"]].copy()
    d_pos = X[zs.layout["d_pos"]].copy()
    c1 = float(X[zs.layout["c1"]][0]) if "c1" in zs.layout else zs.c1
    c2 = float(X[zs.layout["c2"]][0]) if "c2" in zs.layout else 0.0
    if zs.io == "neumann":
        d_neg = d_neg / b.lam_neg
        d_pos = d_pos / b.lam_pos
    return AxialSolution(b, d_neg, d_pos, -L, L, c1, c2, (-L, L), None,
                         {"io": zs.io, "case": b.case.kind.value, "L": L})


def solve_Z(zs: ZSystem, method: str = "direct", **kw) -> AxialSolution:
    """Solve the Z system and rebuild ``T(z)``; diagnostics land in ``info``."""
    sol = solve_Z_raw(zs, method, **kw)
    out = to_solution(zs, sol.X)
    out.info.update(residual=sol.residual, cond=sol.cond, method=method,
                    rho=zs.M.spectral_radius())
    return out


# -- mixed inlet/outlet data ----------------------------------------------------

def _representatives(fem):
    """One vertex per dof and the lumped mass of each dof."""
    vd = fem.dofs.vertex_dof
    ok = np.nonzero(vd >= 0)[0]
    _, first = np.unique(vd[ok], return_index=True)
    rep = ok[first]
    lumped = fem.dofs.restrict_load(np.asarray(fem.mass_full.sum(axis=1)).ravel())
    return rep, lumped


def solve_mixed(dec: Decomposer, L: float, dir_minus, dir_plus, T_minus, T_plus,
                S_minus=None, S_plus=None, neumann_weight: float = 1.0) -> AxialSolution:
    """Temperature on part of each face and flux on the rest, by weighted least squares.

    ``dir_minus``/``dir_plus`` are boolean vertex masks of the Dirichlet
    parts of the faces ``z = -L`` and ``z = +L``.  Conditions are collocated
    at one vertex per dof and weighted by the square root of the lumped mass,
    flux rows additionally by ``neumann_weight``.
    """
    b = dec.basis
    fem = b.fem
    n = fem.mesh.n_vertices
    S_minus = np.zeros(n) if S_minus is None else np.asarray(S_minus, float)
    S_plus = np.zeros(n) if S_plus is None else np.asarray(S_plus, float)
    kind = b.case.kind
    cols = [] if kind is CaseClass.CONSTANTS_CONTROLLED else ["c1"]
    if kind is CaseClass.BALANCED:
        cols.append("c2")
    rep, lumped = _representatives(fem)
    wts = np.sqrt(lumped)
    nn, npp = len(b.lam_neg), len(b.lam_pos)
    rows, rhs = [], []
    for zs, mask, T, S in ((-1, dir_minus, T_minus, S_minus), (1, dir_plus, T_plus, S_plus)):
        D = face_columns(dec, L, "dirichlet", zs, cols)[rep]
        N = face_columns(dec, L, "neumann", zs, cols)[rep].copy()
        # flux columns: modal columns carry lam, c1 drops out, c2 gives 1
        N[:, :nn] *= b.lam_neg[None, :]
        N[:, nn:nn + npp] *= b.lam_pos[None, :]
        if "c1" in cols:
            N[:, nn + npp + cols.index("c1")] = 0.0
        m = np.asarray(mask, bool)[rep]
        A = np.where(m[:, None], D, neumann_weight * N)
        g = np.where(m, np.asarray(T, float)[rep], neumann_weight * S[rep])
        rows.append(A * wts[:, None])
        rhs.append(g * wts)
    A = np.vstack(rows)
    g = np.concatenate(rhs)
    X, *_ = sla.lstsq(A, g)
    res = float(np.linalg.norm(A @ X - g) / max(np.linalg.norm(g), np.finfo(float).tiny))
    d_neg, d_pos = X[:nn], X[nn:nn + npp]
    c1 = float(X[nn + npp + cols.index("c1")]) if "c1" in cols else 0.0
    c2 = float(X[nn + npp + cols.index("c2")]) if "c2" in cols else 0.0
    return AxialSolution(b, d_neg, d_pos, -L, L, c1, c2, (-L, L), None,
                         {"io": "mixed", "case": kind.value, "L": L, "residual": res})


# -- exchanger diagnostics -------------------------------------------------------

def bulk_temperature(sol: AxialSolution, z: float, tube_id: int) -> float:
    """Velocity-weighted mean ``int_tube h T / int_tube h``."""
    fem = sol.basis.fem
    mesh = fem.mesh
    ht = np.zeros(mesh.n_vertices)
    verts = mesh.subdomain_vertices(int(tube_id))
    ht[verts] = fem.h[verts]
    flow = float(np.sum(fem.mass_full @ ht))
    if flow == 0.0:
        raise ValueError(f"tube {tube_id} carries no flow")
    return float(ht @ (fem.mass_full @ sol.evaluate(z))) / flow


@dataclass(frozen=True)
class ExchangerMetrics:
    efficiency: float
    exchange: float
    per_tube: dict


def exchanger_metrics(sol: AxialSolution, inlets: dict, Q: float) -> ExchangerMetrics:
    """Efficiency ``-T_out / T_in`` averaged over tubes, and exchange ``Q * efficiency``.

    ``inlets[tube_id] = T_in``; a tube with positive flow enters at ``-L`` and
    leaves at ``+L``, a tube with negative flow the other way round.  Outlet
    temperatures are mixed-cup values at the outlet face.
    """
    lo, hi = sol.domain
    fem = sol.basis.fem
    per = {}
    for tid, T_in in inlets.items():
        verts = fem.mesh.subdomain_vertices(int(tid))
        q = float(np.sum(fem.mass_full[verts] @ fem.h))
        z_out = hi if q > 0 else lo
        per[int(tid)] = -bulk_temperature(sol, z_out, tid) / T_in
    eff = float(np.mean(list(per.values())))
    return ExchangerMetrics(eff, Q * eff, per)
