"""Pressure recovery for the transformed momentum equation.

The zero-mean part solves ``int pi B : grad w = r(w)`` in the least-squares
sense of the discrete saddle system, where ``r`` collects every momentum
term except the pressure. The spatial constant follows from integrating the
shell equation over the parameter circle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InsufficientHistory, SingularProjection
from .mesh import Mesh, SaddleSolver


def geometric_divergence(mesh: Mesh, B) -> sp.csr_matrix:
    """``D_B[q, w] = int q B : grad w`` with P1 ``q`` and vector P2 ``w``."""
    W1 = mesh.E1.T @ sp.diags(mesh.weights)
    blocks = []
    for i in range(2):
        G = sp.diags(B[:, i, 0]) @ mesh.Gx + sp.diags(B[:, i, 1]) @ mesh.Gy
        blocks.append(W1 @ G)
    return sp.hstack(blocks).tocsr()


def momentum_load(mesh: Mesh, tf, v, gv, dtv, f=None, rho: float = 1.0, mu: float = 1.0) -> np.ndarray:
    """Load vector of all non-pressure momentum terms tested with P2 fields.

    ``r(w) = int rho J (d_t v + grad v W).w + rho (grad v B^T v).w
    + mu (grad v A) : grad w - J f.w``.
    """
    w = mesh.weights
    J = tf.J
    a = rho * J[:, None] * (dtv + np.einsum("pij,pj->pi", gv, tf.W))
    a += rho * np.einsum("pij,pkj,pk->pi", gv, tf.B, v)
    if f is not None:
        a -= J[:, None] * f
    M = mu * np.einsum("pik,pkj->pij", gv, tf.A)
    out = []
    for i in range(2):
        out.append(mesh.E2.T @ (w * a[:, i]) + mesh.Gx.T @ (w * M[:, i, 0]) + mesh.Gy.T @ (w * M[:, i, 1]))
    return np.concatenate(out)


def solve_pressure(mesh: Mesh, B, J, load) -> np.ndarray:
    """Nodal P1 pressure with ``int J pi = 0`` matching ``load`` against ``D_B``."""
    D = geometric_divergence(mesh, B)
    try:
        solver = SaddleSolver(mesh, divergence=D)
    except Exception as exc:
        raise SingularProjection(f"pressure system is singular: {exc}") from exc
    _, p = solver.solve(np.asarray(load, dtype=float), np.zeros(mesh.n1))
    if not np.all(np.isfinite(p)):
        raise SingularProjection("pressure solve produced non-finite values")
    pq = mesh.E1 @ p
    mean = np.sum(mesh.weights * J * pq) / np.sum(mesh.weights * J)
    return p - mean


def boundary_pressure(mesh: Mesh, p, y) -> np.ndarray:
    """P1 pressure evaluated along the boundary polygon at parameters ``y``."""
    bv = mesh.boundary_vertices
    return np.interp(np.asarray(y) % 1.0, mesh.boundary_y, p[bv], period=1.0)


def pressure_constant(accel, g, pi_boundary, weight, traction, rho_s: float = 1.0, mu: float = 1.0) -> float:
    """Constant ``c`` balancing the shell equation integrated over the circle.

    All arguments are samples on a uniform parameter grid: shell acceleration,
    shell force, zero-mean pressure trace, normal-flux weight and the normal
    component of the viscous traction ``n . grad v F^{-1} rot(d_y phi_zeta)``.
    """
    weight = np.asarray(weight, dtype=float)
    total = (rho_s * np.mean(accel) - np.mean(g) - np.mean(np.asarray(pi_boundary) * weight)
             + mu * np.mean(traction))
    return float(total / np.mean(weight))


@dataclass(frozen=True)
class PressureField:
    t: float
    zero_mean: np.ndarray
    constant: float

    @property
    def values(self) -> np.ndarray:
        return self.zero_mean + self.constant


def _backward(history, dt):
    """Second-order backward difference from the last three samples."""
    a, b, c = history
    return (3 * c - 4 * b + a) / (2 * dt)


def recover_pressure(system, traj, result, index: int = -1) -> PressureField:
    """Pressure at an accepted state of a run (needs two earlier states)."""
    from .geometry import boundary_flux_weight, hanzawa
    from .mesh import boundary_evaluator

    N = len(result.times)
    idx = index % N if N else 0
    if N < 3 or idx < 2:
        raise InsufficientHistory("pressure recovery needs two earlier accepted states")
    t = result.times[idx]
    dt = t - result.times[idx - 1]
    if abs((result.times[idx - 1] - result.times[idx - 2]) - dt) > 1e-9 * max(dt, 1.0):
        raise InsufficientHistory("pressure recovery needs uniform steps")
    mesh = system.mesh
    ph = system.physics
    zeta, zeta_t = traj.at(t)
    geo = system.geometry(t, zeta, zeta_t, rates=False)
    from .geometry import transform_fields

    tf = transform_fields(system.domain, zeta, system.points, zeta_t, check=False)
    alpha = result.alphas[idx]
    v = np.einsum("k,kpi->pi", alpha, geo.V)
    gv = np.einsum("k,kpij->pij", alpha, geo.gV)
    dtv = _backward([result.fluid[idx - 2], result.fluid[idx - 1], result.fluid[idx]], dt)
    f = None
    if system.forcing.has_fluid:
        f = system.forcing.f(t, hanzawa(system.domain, zeta, mesh.quad_points))
    load = momentum_load(mesh, tf, v, gv, dtv, f, ph.rho_f, ph.mu)
    p0 = solve_pressure(mesh, tf.B, tf.J, load)

    y = system.y
    m = system.m
    rates = [result.eta_rates[i].to_samples(m) for i in (idx - 2, idx - 1, idx)]
    accel = _backward(rates, dt)
    g = system.forcing.g(t, y) if system.forcing.has_shell else np.zeros(m)
    weight = boundary_flux_weight(system.domain, zeta.to_samples(m), y)
    U = alpha @ system.basis.modes
    E, Gx, Gy = boundary_evaluator(mesh, y)
    d = U.reshape(2, mesh.n2)
    u = np.stack([E @ d[0], E @ d[1]], axis=1)
    gu = np.stack([np.stack([Gx @ d[i], Gy @ d[i]], axis=1) for i in range(2)], axis=1)
    tfb = geo.tfb
    _, gvb = tfb.piola(u, gu)
    _, d1, n, dn, _ = system.domain.curve.frame(y)
    zs = zeta.to_samples(m)
    tangent = d1 + zeta.to_samples(m, deriv=1)[:, None] * n + zs[:, None] * dn
    rot = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    traction = np.einsum("pi,pij,pjk,pk->p", n, gvb, tfb.Finv, rot)
    c = pressure_constant(accel, g, boundary_pressure(mesh, p0, y), weight, traction, ph.rho_s, ph.mu)
    return PressureField(t, p0, c)
