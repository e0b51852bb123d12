"""
Lift removing the viscous heating source.

A particular solution ``T~`` of

    c T'' + div(sigma grad T) - h T' = mu |grad h|^2

is built explicitly so that ``T - T~`` solves the homogeneous problem.  The
form depends on the case class:

* constants controlled: ``T~ = Delta^{-1}(mu |grad h|^2)``;
* unbalanced: ``T~ = alpha z + Delta^{-1}(mu |grad h|^2 + alpha h)`` with
  ``alpha = -mu int|grad h|^2 / int h``;
* balanced: ``T~ = alpha (z^2/2 + z w) + Delta^{-1} gamma`` with
  ``w = Delta^{-1} h``, ``gamma = mu |grad h|^2 - alpha (c - h w)`` and
  ``alpha = mu int|grad h|^2 / |phi_0|_H^2`` so that ``gamma`` has zero mean.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import CaseClass, FemMatrices, grad_squared, laplace_inverse, laplace_inverse_load, p0_load


@dataclass(frozen=True)
class ViscousLift:
    fem: FemMatrices
    kind: CaseClass
    mu: float
    alpha: float
    base: np.ndarray                 # z-independent part
    w: np.ndarray | None = None      # Delta^{-1} h, balanced case only
    gamma_mean: float = 0.0          # int gamma (balanced), for diagnostics
    gamma_scale: float = 0.0

    def evaluate(self, z: float) -> np.ndarray:
        if self.kind is CaseClass.BALANCED:
            return self.alpha * (z * z / 2 + z * self.w) + self.base
        if self.kind is CaseClass.CONSTANTS_CONTROLLED:
            return self.base.copy()
        return self.alpha * z + self.base

    def evaluate_dz(self, z: float) -> np.ndarray:
        n = len(self.base)
        if self.kind is CaseClass.BALANCED:
            return self.alpha * (z + self.w)
        if self.kind is CaseClass.CONSTANTS_CONTROLLED:
            return np.zeros(n)
        return np.full(n, self.alpha)

    def evaluate_dzz(self, z: float) -> np.ndarray:
        n = len(self.base)
        return np.full(n, self.alpha) if self.kind is CaseClass.BALANCED else np.zeros(n)

    def source_load(self) -> np.ndarray:
        return p0_load(self.fem.mesh, self.mu * grad_squared(self.fem.mesh, self.fem.h))


def viscous_lift(mu: float, fem: FemMatrices, kind: CaseClass) -> ViscousLift:
    if mu < 0:
        raise ValueError("viscosity must be nonnegative")
    mesh = fem.mesh
    g2 = grad_squared(mesh, fem.h)
    F = p0_load(mesh, mu * g2)
    total = float(F.sum())
    n = mesh.n_vertices
    if kind is CaseClass.CONSTANTS_CONTROLLED:
        return ViscousLift(fem, kind, mu, 0.0, laplace_inverse_load(fem, F))
    if kind in (CaseClass.UNBALANCED_POSITIVE, CaseClass.UNBALANCED_NEGATIVE):
        flow = fem.integrate(fem.h)
        if flow == 0.0:
            raise ValueError("int h = 0: the problem is balanced, not unbalanced")
        alpha = -total / flow
        load = F + alpha * (fem.mass_full @ fem.h)
        return ViscousLift(fem, kind, mu, alpha, laplace_inverse_load(fem, load, scale=np.abs(F).sum() * 2))
    w = laplace_inverse(fem, fem.h)
    norm2 = fem.integrate_c(np.ones(n)) + float(w @ (fem.K_full @ w))
    alpha = total / norm2
    load = F - alpha * (fem.M_c_full @ np.ones(n) - fem.M_h_full @ w)
    scale = float(np.abs(F).sum() + abs(alpha) * (np.abs(fem.M_c_full @ np.ones(n)).sum()
                                                 + np.abs(fem.M_h_full @ w).sum()))
    base = laplace_inverse_load(fem, load, scale=scale)
    return ViscousLift(fem, kind, mu, alpha, base, w, float(load.sum()), scale)


def lift_residual(lift: ViscousLift, z_samples) -> float:
    """Max over ``z`` of the scaled weak residual of the forced equation for ``T~``."""
    fem = lift.fem
    F = lift.source_load()
    worst = 0.0
    for z in np.atleast_1d(z_samples):
        terms = [fem.dofs.restrict_load(v) for v in (
            fem.M_c_full @ lift.evaluate_dzz(z),
            fem.K_full @ lift.evaluate(z),
            fem.M_h_full @ lift.evaluate_dz(z),
            F,
        )]
        r = terms[0] - terms[1] - terms[2] - terms[3]
        scale = sum(np.linalg.norm(t) for t in terms)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(r) / scale))
    return worst
