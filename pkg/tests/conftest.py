"""Shared small-mesh fixtures.

Four configurations on a structured 8x8 mesh of ``[-1, 1]^2``, one per case
class.  They are small enough for the dense eigensolver, which returns the
full spectrum, so truncation plays no role unless a test asks for it.
"""
from __future__ import annotations

import numpy as np
import pytest

from graetz.assembly import CaseClass, MaterialField, assemble, case_of
from graetz.decomp import Decomposer
from graetz.mesh import BoundarySpec, dirichlet, generate_structured_rectangle, neumann
from graetz.spectral import build_pencil, eigensolve

CASES = ("controlled", "positive", "negative", "balanced")


def square_mesh(n: int = 8):
    return generate_structured_rectangle(n, n, -1.0, 1.0, -1.0, 1.0)


def small_fem(case: str, n: int = 8):
    mesh = square_mesh(n)
    x, y = mesh.vertices.T
    c = 1.0 + 0.25 * x ** 2
    sigma = 1.0 + 0.1 * y
    mat = MaterialField(c[mesh.triangles].mean(axis=1), sigma[mesh.triangles].mean(axis=1))
    if case == "controlled":
        bc = BoundarySpec.uniform(mesh, dirichlet())
        h = 1.0 + 0.5 * x
    else:
        bc = BoundarySpec.uniform(mesh, neumann())
        h = 1.0 + 0.5 * x + 0.3 * y ** 2
        if case == "negative":
            h = -h
        elif case == "balanced":
            # odd under the point reflection that maps the mesh onto itself
            h = x + 0.3 * y + 0.2 * x ** 3
    fem = assemble(mesh, mat, bc).with_velocity(h)
    return fem


EXPECTED_KIND = {
    "controlled": CaseClass.CONSTANTS_CONTROLLED,
    "positive": CaseClass.UNBALANCED_POSITIVE,
    "negative": CaseClass.UNBALANCED_NEGATIVE,
    "balanced": CaseClass.BALANCED,
}


@pytest.fixture(scope="session")
def fems():
    return {k: small_fem(k) for k in CASES}


@pytest.fixture(scope="session")
def bases(fems):
    out = {}
    for k, fem in fems.items():
        p = build_pencil(fem, case_of(fem))
        dim = p.S.shape[0]
        n_neg = n_pos = (dim - 2) // 2
        # ask for every mode the spectrum offers
        lam_all = np.linalg.eigvals(np.linalg.solve(p.G.toarray(), p.S.toarray())).real
        scale = np.max(np.abs(lam_all))
        nz = np.abs(lam_all) > 1e-9 * scale
        n_neg, n_pos = int(np.sum(lam_all[nz] < 0)), int(np.sum(lam_all[nz] > 0))
        out[k] = eigensolve(p, n_neg, n_pos, dense=True)
    return out


@pytest.fixture(scope="session")
def decs(bases):
    return {k: Decomposer(b) for k, b in bases.items()}


@pytest.fixture(scope="session")
def truncated_decs(bases):
    """Twelve modes per sign, as a genuinely truncated basis."""
    return {k: Decomposer(b.truncate(12, 12)) for k, b in bases.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


#: criterion number -> one-line verdict, filled by test_acceptance.py
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
