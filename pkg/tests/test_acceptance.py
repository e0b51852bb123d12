"""
Acceptance criteria 1 to 11.

Each test records one PASS/FAIL line (printed in the "acceptance criteria"
section of the pytest summary) and then asserts the criterion at its stated
tolerance.  Run on its own with

    pytest tests/test_acceptance.py -v
"""
from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg as sla

from graetz.assembly import CaseClass, MaterialField, assemble, case_of
from graetz.decomp import Decomposer, gram_lower_bound
from graetz.finite_domain import assemble_M, assemble_Z_dirichlet, assemble_Z_neumann, solve_Z, solve_Z_raw
from graetz.mesh import BoundarySpec, dirichlet, generate_square_with_tubes
from graetz.oracle import FaceData, compare, solve_3d
from graetz.scenarios import (decomposer, exchanger, exchanger_mesh, run_exchanger, single_tube,
                              single_tube_mesh)
from graetz.semi_infinite import AxialSolution
from graetz.spectral import P, apply_A, apply_A_inverse, build_pencil, eigensolve, h_inner, h_norm, relative_deviation
from graetz.viscous import lift_residual, viscous_lift

from conftest import ACCEPTANCE, CASES

# Published smallest-magnitude eigenvalues for the single tube at Q = 10, c = sigma = 1
REF_NEUMANN = {"pos": [0.0897, 0.3197, 0.3197, 0.4449], "neg": [-0.3070, -0.3070, -0.4437]}
REF_DIRICHLET = {"pos": [0.5824, 0.7354, 0.7354, 0.8953], "neg": [-0.2805, -0.6504, -0.6504, -0.8377]}
REF_ROUNDING = 5e-5     # half a unit in the last printed digit

COARSE = (0.3, 64)
FINE = (0.12, 128)


def record(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])


# -- shared heavy objects -------------------------------------------------------

@pytest.fixture(scope="module")
def tube_meshes():
    return {"coarse": single_tube_mesh(*COARSE), "fine": single_tube_mesh(*FINE)}


@pytest.fixture(scope="module")
def endpoint_bases(tube_meshes):
    out = {}
    for res, mesh in tube_meshes.items():
        for lat in ("neumann", "dirichlet"):
            fem = single_tube(mesh, lat, 10.0)
            out[res, lat] = eigensolve(build_pencil(fem, case_of(fem)), 5, 5)
    return out


@pytest.fixture(scope="module")
def exchanger_setup():
    mesh = exchanger_mesh(0.5, 32)
    return mesh, decomposer(exchanger(mesh, 10.0), 50, 50)


# -- 1 --------------------------------------------------------------------------

def test_criterion_01_constant_velocity_exactness():
    mesh = generate_square_with_tubes(1.0, [], 0.12)
    fem = assemble(mesh, MaterialField.uniform(mesh), BoundarySpec.uniform(mesh, dirichlet()))
    worst = 0.0
    for h0 in (0.5, -2.0):
        f = fem.with_velocity(np.full(mesh.n_vertices, h0))
        mu = sla.eigh(f.K.toarray(), f.M_c.toarray(), eigvals_only=True)
        # dense: every eigenvalue; sparse: the 20 of each sign nearest zero
        for dense, n in ((True, len(mu)), (False, 20)):
            b = eigensolve(build_pencil(f, case_of(f)), n, n, dense=dense)
            for lam, root in ((b.lam_pos, +1), (b.lam_neg, -1)):
                expect = np.sort((h0 + root * np.sqrt(h0 ** 2 + 4 * mu)) / 2)
                expect = expect if root > 0 else expect[::-1]
                worst = max(worst, float(np.max(np.abs(lam / expect[:len(lam)] - 1))))
    ok = worst <= 1e-10
    record(1, ok, f"max relative error {worst:.2e} (tol 1e-10), {mesh.n_vertices} vertices")
    assert ok


# -- 2 --------------------------------------------------------------------------

def test_criterion_02_endpoint_eigenvalues(endpoint_bases):
    worst_fine = 0.0
    moves_toward = True
    agg = {}
    for lat, ref_vals in (("neumann", REF_NEUMANN), ("dirichlet", REF_DIRICHLET)):
        for res in ("coarse", "fine"):
            b = endpoint_bases[res, lat]
            got = np.concatenate([b.lam_pos[:len(ref_vals["pos"])], b.lam_neg[:len(ref_vals["neg"])]])
            agg[res, lat] = got
        ref = np.array(ref_vals["pos"] + ref_vals["neg"])
        e_c = np.abs(agg["coarse", lat] - ref)
        e_f = np.abs(agg["fine", lat] - ref)
        worst_fine = max(worst_fine, float(np.max(e_f / np.abs(ref))))
        moves_toward &= bool(np.all(e_f <= e_c + REF_ROUNDING))
    ok = worst_fine <= 0.03 and moves_toward
    record(2, ok, f"fine-mesh max relative deviation {worst_fine:.2e} (tol 3e-2); "
                  f"coarse->fine moves toward reference: {moves_toward}")
    assert ok


# -- 3 --------------------------------------------------------------------------

def test_criterion_03_robin_continuity(tube_meshes, endpoint_bases):
    mesh = tube_meshes["coarse"]
    ladder = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1e4]
    neg, pos, dev = [], [], []
    for a in ladder:
        fem = single_tube(mesh, a, 10.0)
        b = eigensolve(build_pencil(fem, case_of(fem)), 5, 4)
        neg.append(b.lam_neg)
        pos.append(b.lam_pos)
        dev.append(relative_deviation(fem, b.U_neg[:, 0]))
    neg, pos, dev = np.array(neg), np.array(pos), np.array(dev)
    mono = bool(np.all(np.diff(pos, axis=0) > 0) and np.all(np.diff(neg, axis=0) < 0))
    bn, bd = endpoint_bases["coarse", "neumann"], endpoint_bases["coarse", "dirichlet"]
    # small a: the extra mode lam_{-1} -> 0 and the others follow the Neumann spectrum
    conn_n = max(np.max(np.abs(pos[0] - bn.lam_pos[:4]) / np.abs(bn.lam_pos[:4])),
                 np.max(np.abs(neg[0, 1:] - bn.lam_neg[:4]) / np.abs(bn.lam_neg[:4])))
    conn_d = max(np.max(np.abs(pos[-1] - bd.lam_pos[:4]) / np.abs(bd.lam_pos[:4])),
                 np.max(np.abs(neg[-1] - bd.lam_neg[:5]) / np.abs(bd.lam_neg[:5])))
    to_zero = bool(np.all(np.diff(np.abs(neg[:, 0])) > 0)) and abs(neg[0, 0]) < 1e-4
    dev_mono = bool(np.all(np.diff(dev) > 0))
    ratio = dev[ladder.index(100.0)] / dev[0]
    ok = mono and conn_n < 1e-3 and conn_d < 1e-3 and to_zero and dev_mono and ratio > 100
    record(3, ok, f"monotone {mono}; endpoint gaps {conn_n:.1e}/{conn_d:.1e}; lam_-1(1e-5)={neg[0, 0]:.2e}; "
                  f"deviation monotone {dev_mono}, ratio a=100/a=1e-5 {ratio:.3g} (>100)")
    assert ok


# -- 4 --------------------------------------------------------------------------

def test_criterion_04_gram_bound(bases, endpoint_bases, exchanger_setup):
    pool = [Decomposer(b) for b in bases.values()]
    pool += [Decomposer(b.truncate(12, 12)) for b in bases.values()]
    pool += [Decomposer(b) for b in endpoint_bases.values()]
    pool.append(exchanger_setup[1])
    worst_low, worst_high = np.inf, -np.inf
    for d in pool:
        for sign in (-1, 1):
            ev = d.grams[sign].eigenvalues
            worst_low = min(worst_low, ev.min() - gram_lower_bound(d.basis, sign))
            worst_high = max(worst_high, ev.max())
    ok = worst_low >= -1e-10 and worst_high <= 1 + 1e-10
    record(4, ok, f"{len(pool)} bases: min(eig W - bound) {worst_low:.3e} (>= -1e-10), "
                  f"max eig W {worst_high:.12f} (<= 1+1e-10)")
    assert ok


# -- 5 --------------------------------------------------------------------------

def _random_trace(fem, r):
    return fem.dofs.prolong(r.standard_normal(fem.dofs.n_dofs))


def test_criterion_05_decomposition_residuals(bases):
    r = np.random.default_rng(5)
    worst, worst_alpha = 0.0, 0.0
    for case in CASES:
        dec = Decomposer(bases[case].truncate(12, 12))
        fem = dec.fem
        tests = dec.basis.U_neg
        if case in ("positive", "balanced"):
            tests = np.column_stack([tests, np.ones(fem.mesh.n_vertices)])
        # the test family is c-orthonormalised so the residual reads as an H norm of P(psi - phi)
        Rm = np.linalg.cholesky(tests.T @ fem.M_c_full @ tests)
        for _ in range(20):
            phi = _random_trace(fem, r)
            if dec.needs_compat(-1):
                us = dec.u_star(-1)
                phi = phi - dec.c_inner(us, phi) / dec.c_inner(us, us) * us
            res = dec.decompose(phi)
            diff = res.trace(dec.basis) - phi
            proj = sla.solve_triangular(Rm, tests.T @ fem.M_c_full @ diff, lower=True)
            worst = max(worst, float(np.linalg.norm(proj) / np.sqrt(dec.c_inner(phi, phi))))
            if case == "balanced":
                us = dec.u_star(-1)
                one = np.ones_like(phi)
                alpha = (us @ fem.M_c_full @ phi) / (us @ fem.M_c_full @ one)
                worst_alpha = max(worst_alpha, abs(res.kernel - alpha) / max(abs(alpha), 1e-300))
    ok = worst <= 1e-8 and worst_alpha <= 1e-8
    record(5, ok, f"max |P psi - P phi| on test family {worst:.2e} (tol 1e-8); "
                  f"kernel coefficient error {worst_alpha:.2e} (tol 1e-8)")
    assert ok


# -- 6 --------------------------------------------------------------------------

def _state(fem, r):
    u = _random_trace(fem, r)
    s = _random_trace(fem, r)
    if not fem.constants_controlled:
        s = s - fem.integrate(s) / fem.area
    return u, s


def test_criterion_06_operator_identities(bases, exchanger_setup):
    r = np.random.default_rng(6)
    sp1a, sp1b, a2 = 0.0, 0.0, 0.0
    for case in CASES:
        b = bases[case]
        fem = b.fem
        for _ in range(50):
            (u, s), (v, t) = _state(fem, r), _state(fem, r)
            zero = np.zeros_like(u)
            # (Id - P) A (Id - P) phi
            y = apply_A(fem, (zero, s))
            sp1a = max(sp1a, h_norm(fem, (zero, y[1])) / h_norm(fem, (zero, s)))
            # (P A P phi | phi') = int h u u'
            lhs = h_inner(fem, P(apply_A(fem, (u, zero))), (v, t))
            rhs = float(v @ fem.M_h_full @ u)
            sp1b = max(sp1b, abs(lhs - rhs) / (h_norm(fem, (u, zero)) * h_norm(fem, (v, zero))))
        for _ in range(10):
            u = _random_trace(fem, r)
            if case == "balanced":
                u = u - fem.integrate_c(u) / fem.integrate_c(np.ones_like(u)) * fem.dofs.prolong(
                    fem.dofs.from_nodal(np.ones_like(u)))
            phi = (u, np.zeros_like(u))
            got = h_inner(fem, apply_A_inverse(b, phi), phi)
            if case in ("positive", "negative"):
                expect = fem.integrate_c(u) ** 2 / b.case.flow
            else:
                expect = 0.0
            a2 = max(a2, abs(got - expect) / h_inner(fem, phi, phi))
    mesh, dec = exchanger_setup
    one = np.ones(mesh.n_vertices)
    l5 = []
    for m in (25, 50):
        d = Decomposer(dec.basis.truncate(m, m))
        l5.append(abs(d.c_inner(d.u_star(-1), one)))
    drift = abs(l5[1] / l5[0] - 1)
    ok = sp1a <= 1e-10 and sp1b <= 1e-10 and a2 <= 1e-8 and min(l5) > 0 and drift <= 0.10
    record(6, ok, f"(Id-P)A(Id-P) {sp1a:.1e}, PAP vs int h {sp1b:.1e} (tol 1e-10); (A^-1 Pphi|Pphi) {a2:.1e} (tol 1e-8); "
                  f"|(u_-|Phi)| {l5[0]:.4g} -> {l5[1]:.4g} for 25 -> 50 modes (drift {drift:.1%}, tol 10%)")
    assert ok


# -- 7 --------------------------------------------------------------------------

def test_criterion_07_decay_of_M():
    mesh = single_tube_mesh(0.4, 48)
    Ls = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
    all_below = True
    slopes = []
    for Q in (1.0, 10.0, 100.0, 1000.0):
        dec = decomposer(single_tube(mesh, 1.0, Q), 50, 50)
        rho = np.array([assemble_M(L, dec).spectral_radius() for L in Ls])
        all_below &= bool(np.all(rho < 1))
        slope = (np.log(rho[-1]) - np.log(rho[-2])) / (Ls[-1] - Ls[-2])
        lam = min(dec.basis.lam_pos[0], -dec.basis.lam_neg[0])
        slopes.append((Q, slope, -2 * lam, abs(slope / (-2 * lam) - 1)))
    slope_ok = all(rel <= 0.05 for *_, rel in slopes)
    ok = all_below and slope_ok
    detail = "; ".join(f"Q={Q:g}: slope {s:.3f} vs -2lam {t:.3f} ({rel:.0%})" for Q, s, t, rel in slopes)
    record(7, ok, f"rho<1 on grid {all_below}; {detail} (tol 5%)")
    assert ok


# -- 8 --------------------------------------------------------------------------

def test_criterion_08_z_solves(bases):
    r = np.random.default_rng(8)
    worst_agree, worst_res, combos = 0.0, 0.0, 0
    L = 0.6
    for case in CASES:
        dec = Decomposer(bases[case].truncate(12, 12))
        b = dec.basis
        for io in ("dirichlet", "neumann"):
            c1 = 0.0 if dec.case.controlled else float(r.standard_normal())
            c2 = float(r.standard_normal()) if dec.case.balanced else 0.0
            ref = AxialSolution(b, r.standard_normal(12), r.standard_normal(12), -L, L, c1, c2, (-L, L))
            f = ref.evaluate if io == "dirichlet" else ref.evaluate_dz
            if io == "dirichlet":
                zs = assemble_Z_dirichlet(f(-L), f(L), L, dec)
            else:
                zs = assemble_Z_neumann(f(-L), f(L), L, dec, c1)
            direct = solve_Z_raw(zs, "direct")
            worst_res = max(worst_res, direct.residual)
            combos += 1
            if zs.M.spectral_radius() <= 0.9:
                series = solve_Z_raw(zs, "neumann_series")
                worst_agree = max(worst_agree, float(np.max(np.abs(direct.X - series.X))
                                                     / max(1.0, np.max(np.abs(direct.X)))))
    ok = worst_agree <= 1e-10 and worst_res <= 1e-8
    record(8, ok, f"direct vs series {worst_agree:.1e} (tol 1e-10); max Z residual {worst_res:.1e} "
                  f"(tol 1e-8) over {combos} case x I/O combinations")
    assert ok


# -- 9 --------------------------------------------------------------------------

def test_criterion_09_oracle_equivalence():
    mesh = single_tube_mesh(0.8, 32)
    x, y = mesh.vertices.T
    L, nz = 1.0, 40
    summary, ok = [], True
    # face data compatible with the lateral condition (see the decisions ledger)
    for name, lat, T_minus in (("controlled", "dirichlet", np.cos(np.pi * x / 10) * np.cos(np.pi * y / 10)),
                               ("unbalanced", "neumann", np.cos(np.pi * x / 5) * np.cos(np.pi * y / 5))):
        fem = single_tube(mesh, lat, 10.0)
        dec = decomposer(fem, 50, 50)
        T_plus = np.zeros(mesh.n_vertices)
        grid = solve_3d(fem, -L, L, nz, FaceData.dirichlet(T_minus), FaceData.dirichlet(T_plus))
        errs = []
        for m in (10, 25, 50):
            d = Decomposer(dec.basis.truncate(m, m))
            errs.append(compare(solve_Z(assemble_Z_dirichlet(T_minus, T_plus, L, d)), grid).relative)
        good = errs[-1] <= 1e-2 and errs[0] > errs[1] > errs[2]
        ok &= good
        summary.append(f"{name} {' > '.join(f'{e:.2e}' for e in errs)}")
    record(9, ok, "; ".join(summary) + " (truncation 10/25/50, tol 1e-2 at 50)")
    assert ok


# -- 10 -------------------------------------------------------------------------

def test_criterion_10_viscous_lift(exchanger_setup):
    mesh = single_tube_mesh(0.4, 48)
    fems = {
        CaseClass.CONSTANTS_CONTROLLED: single_tube(mesh, 1.0, 10.0),
        CaseClass.UNBALANCED_POSITIVE: single_tube(mesh, "neumann", 10.0),
        CaseClass.BALANCED: exchanger_setup[1].fem,
    }
    worst, gamma = 0.0, 0.0
    for kind, fem in fems.items():
        assert case_of(fem).kind is kind
        lift = viscous_lift(0.37, fem, kind)
        worst = max(worst, lift_residual(lift, np.linspace(-5, 5, 11)))
        if kind is CaseClass.BALANCED:
            gamma = abs(lift.gamma_mean) / lift.gamma_scale
    ok = worst <= 1e-8 and gamma <= 1e-10
    record(10, ok, f"max scaled weak residual {worst:.1e} (tol 1e-8); balanced int gamma {gamma:.1e} (tol 1e-10)")
    assert ok


# -- 11 -------------------------------------------------------------------------

def test_criterion_11_exchanger(exchanger_setup):
    mesh = exchanger_setup[0]
    Ls = np.linspace(0.5, 13.0, 5)
    Qs = np.linspace(1.0, 30.0, 5)
    E = np.empty((len(Ls), len(Qs)))
    for j, Q in enumerate(Qs):
        dec = decomposer(exchanger(mesh, Q), 50, 50)
        for i, L in enumerate(Ls):
            E[i, j] = run_exchanger(dec, L, Q).metrics.efficiency
    eps = 1e-6
    in_range = bool(np.all(E >= -1 + eps) and np.all(E <= 1))
    up_in_L = bool(np.all(np.diff(E, axis=0) >= 0))
    down_in_Q = bool(np.all(np.diff(E, axis=1) <= 0))
    ok = in_range and up_in_L and down_in_Q
    record(11, ok, f"efficiency in [{E.min():.4f}, {E.max():.4f}] within [-1+1e-6, 1]: {in_range}; "
                   f"nondecreasing in L {up_in_L}; nonincreasing in Q {down_in_Q}")
    assert ok
