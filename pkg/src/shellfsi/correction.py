"""Divergence right inverse, solenoidal extension of shell data and flux corrector."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import DegenerateWeight, IncompatibleFlux, InfSupDeficient, SingularSolve
from .geometry import (DEFAULT_DOMAIN, ReferenceDomain, boundary_fields, boundary_flux_weight,
                       transform_fields, tube_coords_many)
from .mesh import FEField, Mesh, SaddleSolver
from .spectral import SpectralField, uniform_grid

log = logging.getLogger(__name__)


def corrector(xi: SpectralField, eta: SpectralField, domain: ReferenceDomain = DEFAULT_DOMAIN,
              m: int | None = None) -> float:
    """Weighted boundary mean of ``xi`` with the normal-flux density of the deformed boundary.

    On the unit disk the weight is proportional to ``1 + eta``. The grid is
    large enough for the trapezoid rule to be exact on band-limited data.
    """
    if m is None:
        m = 2 * (xi.K + eta.K) + 1
        m = max(m, 33) | 1
    y = uniform_grid(m)
    w = boundary_flux_weight(domain, eta.to_samples(m), y)
    if np.any(w <= 0):
        raise DegenerateWeight("boundary weight is not positive")
    return float(np.sum(xi.to_samples(m) * w) / np.sum(w))


def _bump_profile(r, radius):
    out = np.zeros_like(r)
    inside = r < radius
    q = (r[inside] / radius) ** 2
    out[inside] = np.exp(-1.0 / (1.0 - q))
    return out


@dataclass
class BogovskijResult:
    field: FEField
    residual: float
    bound_ratio: float


class CorrectionContext:
    """Mesh operators shared by the correction maps.

    The bump ``b`` is a P1 field supported in ``r < bump_radius`` (outside the
    tube) with unit discrete integral.
    """

    def __init__(self, mesh: Mesh, domain: ReferenceDomain = DEFAULT_DOMAIN, bump_radius: float = 0.4):
        if not domain.is_unit_disk:
            raise ValueError("finite element corrections require the unit-disk reference domain")
        if bump_radius > 1 - domain.L:
            raise ValueError("bump must lie outside the tube")
        self.mesh = mesh
        self.domain = domain
        self.bump_radius = bump_radius
        r = np.linalg.norm(mesh.vertices, axis=1)
        b = _bump_profile(r, bump_radius)
        total = float(np.sum(mesh.mass_p1 @ b))
        if total <= 0:
            raise InfSupDeficient("mesh too coarse to resolve the bump")
        self.bump = b / total

    @cached_property
    def solver(self) -> SaddleSolver:
        return SaddleSolver(self.mesh)

    def bump_integral(self) -> float:
        return float(np.sum(self.mesh.mass_p1 @ self.bump))

    # ------------------------------------------------------------------

    def bogovskij(self, f, eta: SpectralField | None = None) -> BogovskijResult:
        """Zero-trace least-norm field with divergence ``f - b int f``.

        ``f`` holds P1 nodal values of the datum pulled back to the reference
        domain. Without ``eta`` the result is the field itself. With ``eta``
        the result ``U`` is in the reference frame and solves
        ``div U = J (f - b int_deformed f)``; its Piola push ``F U / J`` then
        has deformed-domain divergence ``f - b int f``. The bump lies where
        the transform is the identity, so one operator serves every
        admissible shell.
        """
        mesh = self.mesh
        f = np.asarray(f.values if isinstance(f, FEField) else f, dtype=float)
        Jq = np.ones(mesh.n_quad)
        if eta is not None:
            Jq = transform_fields(self.domain, eta, mesh.quad_points).J
        fq = mesh.E1 @ f
        total = float(np.sum(mesh.weights * Jq * fq))
        target = Jq * (fq - total * (mesh.E1 @ self.bump))
        g = mesh.E1.T @ (mesh.weights * target)
        try:
            u, _ = self.solver.solve(np.zeros(2 * mesh.n2), g)
        except RuntimeError as exc:
            raise SingularSolve(str(exc)) from exc
        if not np.all(np.isfinite(u)):
            raise SingularSolve("Bogovskij solve produced non-finite values")
        residual = self.divergence_residual(u, target)
        fn = float(np.sqrt(np.sum(mesh.weights * fq**2)))
        un = float(np.sqrt(u @ (mesh.vector_stiffness @ u) + u @ (mesh.vector_mass @ u)))
        ratio = un / fn if fn > 0 else 0.0
        log.debug("Bogovskij bound ratio %.3e", ratio)
        return BogovskijResult(FEField.from_flat(u), residual, ratio)

    def divergence_residual(self, u, target_q=None) -> float:
        """L2 norm of the P1 projection of ``div u - target``."""
        from scipy.sparse.linalg import spsolve

        mesh = self.mesh
        r = mesh.divergence @ np.asarray(u)
        if target_q is not None:
            r = r - mesh.E1.T @ (mesh.weights * target_q)
        c = spsolve(mesh.mass_p1.tocsc(), r)
        return float(np.sqrt(max(c @ (mesh.mass_p1 @ c), 0.0)))

    # ------------------------------------------------------------------

    @cached_property
    def _tube(self):
        """Node-wise tube coordinates and the annular correction region."""
        mesh = self.mesh
        y, s, inside = tube_coords_many(self.domain, mesh.nodes)
        on_support = inside & (s > -self.domain.L + 1e-12)
        bnd = np.zeros(mesh.n2, dtype=bool)
        bnd[mesh.boundary_nodes] = True
        region_nodes = np.flatnonzero(on_support & ~bnd)
        solver = SaddleSolver(mesh, nodes=region_nodes)
        return y, s, on_support, solver

    def normal_lift(self, values: SpectralField, eta: SpectralField) -> np.ndarray:
        """Nodal field ``J_b(y) values(y) beta(s) n(y)`` in the tube (reference frame)."""
        mesh = self.mesh
        y, s, on, _ = self._tube
        U = np.zeros((mesh.n2, 2))
        yy, ss = y[on], s[on]
        Jb = boundary_fields(self.domain, eta, yy).J
        beta = self.domain.blend(ss)[0]
        _, _, n, _, _ = self.domain.curve.frame(yy)
        U[on] = (Jb * values.evaluate(yy) * beta)[:, None] * n
        return U.T.ravel()

    def solenoidal_extend(self, xi: SpectralField, eta: SpectralField):
        """Divergence-free extension of ``(xi - K) n`` supported in the tube.

        Returns ``(U, K)``: reference-frame P2 dofs ``U`` whose Piola push
        ``F U / J`` is the extension on the deformed domain, and the constant
        ``K`` removed from ``xi``. ``K`` makes the discrete flux of the lift
        vanish; it agrees with :func:`corrector` up to interpolation error.
        """
        mesh = self.mesh
        *_, solver = self._tube
        ones = np.ones(mesh.n1)
        D = mesh.divergence
        U_xi = self.normal_lift(xi, eta)
        U_1 = self.normal_lift(SpectralField.from_modes([("const", 0, 1.0)], 0), eta)
        flux_1 = float(ones @ (D @ U_1))
        if abs(flux_1) < 1e-14:
            raise IncompatibleFlux("unit normal lift carries no flux")
        K = float(ones @ (D @ U_xi)) / flux_1
        U0 = U_xi - K * U_1
        g = -(D @ U0)
        if abs(g.sum()) > 1e-10 * max(1.0, np.abs(g).max()):
            raise IncompatibleFlux(f"net flux {g.sum():.3e} after correction")
        g_rows = g[solver.rows]
        if np.abs(np.delete(g, solver.rows)).max(initial=0.0) > 1e-12:
            raise IncompatibleFlux("lift divergence leaks outside the correction region")
        u, _ = solver.solve(np.zeros(2 * mesh.n2), g_rows)
        return U0 + u, K

    def extension_trace(self, U, eta: SpectralField, y):
        """Deformed-domain velocity of the extension at boundary parameters ``y``."""
        from .mesh import boundary_evaluator

        E, _, _ = boundary_evaluator(self.mesh, y)
        d = np.asarray(U).reshape(2, self.mesh.n2)
        u = np.stack([E @ d[0], E @ d[1]], axis=1)
        return boundary_fields(self.domain, eta, y).piola(u)

    def discrete_flux(self, U) -> float:
        """Net flux of a reference-frame P2 field through the boundary polygon."""
        return float(np.ones(self.mesh.n1) @ (self.mesh.divergence @ np.asarray(U)))
