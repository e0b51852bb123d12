"""Eigenvalues nearest zero as the outer wall goes from insulating to fixed temperature.

With an insulated wall one negative eigenvalue sits at zero (constants are
not controlled).  A small Robin coefficient ``a`` pushes it off zero roughly
like ``-a |dOmega| / Q``.  The remaining values slide continuously toward the
fixed-temperature spectrum.

    python demos/robin_spectrum.py
"""
from graetz.assembly import case_of
from graetz.scenarios import single_tube, single_tube_mesh
from graetz.spectral import build_pencil, eigensolve

mesh = single_tube_mesh(0.4, 48)
print(f"single tube, {mesh.n_vertices} vertices, Q = 10")
print(f"{'a':>10}  {'lam_-2':>9} {'lam_-1':>11}  {'lam_1':>9} {'lam_2':>9}")
for a in ["neumann", 1e-4, 1e-2, 1.0, 100.0, "dirichlet"]:
    fem = single_tube(mesh, a, 10.0)
    b = eigensolve(build_pencil(fem, case_of(fem)), 3, 3)
    label = a if isinstance(a, str) else f"{a:g}"
    if a == "neumann":
        # the insulated wall has no mode near zero: its first value continues lam_-2
        neg = f"{b.lam_neg[0]:9.5f} {'(at 0)':>11}"
    else:
        neg = f"{b.lam_neg[1]:9.5f} {b.lam_neg[0]:11.3e}"
    print(f"{label:>10}  {neg}  {b.lam_pos[0]:9.5f} {b.lam_pos[1]:9.5f}")
