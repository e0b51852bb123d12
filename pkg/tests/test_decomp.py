import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graetz.assembly import case_of
from graetz.decomp import Decomposer, gram_lower_bound, decompose, gram_P
from graetz.spectral import build_pencil, eigensolve

from conftest import CASES, small_fem


def random_trace(fem, r):
    return fem.dofs.prolong(r.standard_normal(fem.dofs.n_dofs))


def closed_form_alpha(dec, phi):
    """``(u_-|phi) / (u_-|Phi)`` with ``u_-`` rebuilt by an explicit least-squares projection."""
    fem = dec.fem
    U = dec.basis.U_neg
    R = np.linalg.cholesky(fem.M_c_full.toarray())
    one = np.ones(fem.mesh.n_vertices)
    coef, *_ = np.linalg.lstsq(R.T @ U, R.T @ one, rcond=None)
    u_minus = one - U @ coef
    return (u_minus @ fem.M_c_full @ phi) / (u_minus @ fem.M_c_full @ one)


@pytest.mark.parametrize("case", ["controlled", "negative"])
def test_full_basis_decomposes_every_trace(decs, rng, case):
    dec = decs[case]
    phi = random_trace(dec.fem, rng)
    res = dec.decompose(phi)
    assert res.compatible
    assert np.abs(res.trace(dec.basis) - phi).max() < 1e-9 * np.abs(phi).max()


def test_positive_case_needs_compatibility(decs, rng):
    dec = decs["positive"]
    us = dec.u_star(-1)
    # one mode short: u_- does not vanish, while u_+ does (P B_+ Phi = Phi)
    assert np.sqrt(dec.c_inner(us, us)) > 0.1
    assert np.abs(dec.u_star(1)).max() < 1e-9
    phi = random_trace(dec.fem, rng)
    assert not dec.decompose(phi).compatible
    phi_ok = phi - dec.c_inner(us, phi) / dec.c_inner(us, us) * us
    res = dec.decompose(phi_ok)
    assert res.compatible
    assert np.abs(res.trace(dec.basis) - phi_ok).max() < 1e-9 * np.abs(phi_ok).max()


def test_negative_case_mirrors_positive(decs):
    dec = decs["negative"]
    assert np.abs(dec.u_star(-1)).max() < 1e-9
    assert dec.needs_compat(1) and not dec.needs_compat(-1)


def test_incompatible_residual_equals_norm(decs):
    dec = decs["positive"]
    us = dec.u_star(-1)
    res = dec.decompose(us)
    assert not res.compatible
    assert res.residual == pytest.approx(dec.c_inner(us, us), rel=1e-12)


@pytest.mark.parametrize("case", CASES)
def test_zero_trace(decs, case):
    dec = decs[case]
    res = dec.decompose(np.zeros(dec.fem.mesh.n_vertices))
    assert not np.any(res.coeffs)
    assert not res.kernel


def test_balanced_constant_gives_kernel_vector(decs):
    dec = decs["balanced"]
    one = np.ones(dec.fem.mesh.n_vertices)
    res = dec.decompose(one)
    assert res.kernel == pytest.approx(1.0, rel=1e-12)
    assert np.abs(res.coeffs).max() < 1e-10
    assert np.allclose(res.trace(dec.basis), one, atol=1e-10)


@pytest.mark.parametrize("case", CASES)
def test_truncated_residual_is_orthogonal_to_test_family(truncated_decs, rng, case):
    dec = truncated_decs[case]
    fem = dec.fem
    phi = random_trace(fem, rng)
    if dec.needs_compat(-1):
        us = dec.u_star(-1)
        phi = phi - dec.c_inner(us, phi) / dec.c_inner(us, us) * us
    res = dec.decompose(phi)
    r = res.trace(dec.basis) - phi
    tests = dec.basis.U_neg
    if case in ("positive", "balanced"):
        # the kernel term or the compatibility condition also fixes the Phi component
        tests = np.column_stack([tests, np.ones(fem.mesh.n_vertices)])
    assert np.abs(tests.T @ fem.M_c_full @ r).max() < 1e-10 * np.abs(phi).max()


def test_balanced_kernel_coefficient_closed_form(truncated_decs, rng):
    dec = truncated_decs["balanced"]
    for _ in range(5):
        phi = random_trace(dec.fem, rng)
        assert dec.decompose(phi).kernel == pytest.approx(closed_form_alpha(dec, phi), rel=1e-10)


@pytest.mark.parametrize("case", CASES)
def test_gram_spectrum_bounds(decs, truncated_decs, case):
    for d in (decs[case], truncated_decs[case]):
        for sign in (-1, 1):
            ev = d.grams[sign].eigenvalues
            assert ev.max() <= 1 + 1e-10
            assert ev.min() >= gram_lower_bound(d.basis, sign) - 1e-10


def test_gram_is_half_identity_without_flow():
    fem = small_fem("controlled")
    fem = fem.with_velocity(np.zeros(fem.mesh.n_vertices))
    b = eigensolve(build_pencil(fem, case_of(fem)), 10, 10, dense=True)
    for sign in (-1, 1):
        assert np.allclose(gram_P(b, sign).W, 0.5 * np.eye(10), atol=1e-10)
    assert np.allclose(b.lam_neg, -b.lam_pos, rtol=1e-10)


def test_single_mode_gram_is_scalar(bases):
    d = Decomposer(bases["controlled"].truncate(1, 1))
    W = d.grams[-1].W
    assert W.shape == (1, 1) and 0 < W[0, 0] <= 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(CASES), st.sampled_from([-1, 1]))
def test_projection_is_c_orthogonal(truncated_decs, seed, case, sign):
    dec = truncated_decs[case]
    r = np.random.default_rng(seed)
    u, v = random_trace(dec.fem, r), random_trace(dec.fem, r)
    pu = dec.project(sign, u)
    # idempotent and self-adjoint in the c-weighted pairing
    assert np.abs(dec.project(sign, pu) - pu).max() < 1e-9 * np.abs(u).max()
    assert dec.c_inner(pu, v) == pytest.approx(dec.c_inner(u, dec.project(sign, v)), rel=1e-9, abs=1e-12)


def test_module_level_wrapper(decs):
    dec = decs["controlled"]
    phi = np.asarray(dec.fem.h)
    assert np.array_equal(decompose(phi, dec).coeffs, dec.decompose(phi).coeffs)
