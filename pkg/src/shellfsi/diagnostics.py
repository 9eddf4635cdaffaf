"""Monitored quantities: energies, forcing functional, residuals, guard, Gronwall check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import InsufficientHistory
from .spectral import TWO_PI, SpectralField, grid_derivative, sobolev_norm

FRACTIONAL_ORDER = 0.25

# Column order of the per-step diagnostics table (also written to the schema file).
COLUMNS = (
    ("t", "time of the accepted state"),
    ("shell_kinetic", "|d_t eta|^2 in L2 over the shell parameter"),
    ("shell_elastic", "|Delta_y eta|^2 in L2"),
    ("fluid_l2", "|v|^2 in L2 over the reference domain"),
    ("energy", "total discrete energy (kinetic fluid + kinetic shell + elastic)"),
    ("viscous_dissipation", "cumulative integral of |grad v|^2"),
    ("regularization_dissipation", "cumulative eps-term dissipation"),
    ("fractional_dissipation", "cumulative integral of |d_t eta|^2 in W^{2+1/4,2}"),
    ("accel_energy", "|d_t^2 eta|^2 + |d_t Delta_y eta|^2 + |d_t v|^2 + |grad v|^2"),
    ("forcing_H", "1 + |f|_{W1,2}^2 + |d_t f|^2 + |g|_{W1,2}^2 + |d_t g|^2"),
    ("div_residual", "L2 norm of the transformed divergence B:grad v"),
    ("coupling_residual", "max over boundary grid of |v - d_t eta n|"),
    ("balance_defect", "per-step energy balance defect"),
    ("guard_margin", "alpha minus sup |eta|"),
    ("min_J", "minimum Jacobian determinant of the transform"),
    ("newton_iterations", "Newton iterations used by the step"),
)
COLUMN_NAMES = tuple(c for c, _ in COLUMNS)


def _normal(m):
    y = np.arange(m) / m
    return np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=1)


@dataclass(frozen=True)
class BaseEnergy:
    shell_kinetic: float
    shell_elastic: float
    fluid_l2: float
    dissipation_rate: float

    @property
    def total(self) -> float:
        return 0.5 * (self.shell_kinetic + self.shell_elastic + self.fluid_l2)


def base_energy(eta: SpectralField, eta_t: SpectralField, v=None, grad_v=None, weights=None,
                method: str = "spectral", m: int | None = None) -> BaseEnergy:
    """Energy components of a state.

    Shell norms are evaluated from Fourier coefficients (``method="spectral"``)
    or by the trapezoid rule on ``m`` grid points (``method="grid"``); both are
    exact for band-limited data when ``m > 4K``. Fluid norms use quadrature.
    """
    if method == "spectral":
        kin = sobolev_norm(eta_t, 0) ** 2
        el = sobolev_norm(eta.derivative(2), 0) ** 2
    elif method == "grid":
        K = max(eta.K, eta_t.K)
        m = m or 4 * K + 1
        kin = float(np.mean(eta_t.to_samples(m) ** 2))
        el = float(np.mean(eta.to_samples(m, deriv=2) ** 2))
    else:
        raise ValueError(f"unknown method {method!r}")
    fl, diss = 0.0, 0.0
    if v is not None:
        fl = float(np.sum(weights[:, None] * np.asarray(v) ** 2))
    if grad_v is not None:
        diss = float(np.sum(weights[:, None, None] * np.asarray(grad_v) ** 2))
    return BaseEnergy(kin, el, fl, diss)


def accel_energy(times, shell_rates, fluid, weights, grad_sq) -> np.ndarray:
    """Acceleration energy from a history of accepted states.

    ``shell_rates`` holds ``d_t eta`` on a uniform grid, shape ``(N, m)``;
    ``fluid`` holds ``v`` at quadrature points, shape ``(N, P, 2)`` (or
    ``None``); ``grad_sq`` holds ``|grad v|^2`` per state. Time derivatives
    are centred in the interior and one-sided second order at both ends.
    """
    times = np.asarray(times, dtype=float)
    N = times.size
    if N < 3:
        raise InsufficientHistory(f"need at least 3 states, got {N}")
    rates = np.asarray(shell_rates, dtype=float)
    acc = np.gradient(rates, times, axis=0, edge_order=2)
    E = np.mean(acc**2, axis=1) + np.mean(grid_derivative(rates, 2) ** 2, axis=1)
    if fluid is not None:
        fluid = np.asarray(fluid, dtype=float)
        dv = np.gradient(fluid, times, axis=0, edge_order=2)
        E = E + np.einsum("p,npi->n", np.asarray(weights), dv**2)
    if grad_sq is not None:
        E = E + np.asarray(grad_sq, dtype=float)
    return E


def forcing_H(forcing, t: float, x, F, weights, y) -> float:
    """``H(t) = 1 + |f|_{W1,2}^2 + |d_t f|^2 + |g|_{W1,2}^2 + |d_t g|^2``.

    ``x`` are the deformed images of the quadrature points and ``F`` the
    transform gradient there; gradients of ``f`` are pulled back with ``F``
    and integrated over the reference domain.
    """
    H = 1.0
    if forcing.has_fluid:
        f = forcing.f(t, x)
        gf = np.einsum("pim,pmj->pij", forcing.f_grad(t, x), F)
        ft = forcing.f_t(t, x)
        H += float(np.sum(weights[:, None] * (f**2 + ft**2)) + np.sum(weights[:, None, None] * gf**2))
    if forcing.has_shell:
        H += float(np.mean(forcing.g(t, y) ** 2 + forcing.g_y(t, y) ** 2 + forcing.g_t(t, y) ** 2))
    return H


def divergence_residual(B, grad_v, weights) -> float:
    """L2 norm of ``B : grad v`` over the reference domain."""
    div = np.einsum("pij,pij->p", B, grad_v)
    return float(np.sqrt(np.sum(weights * div**2)))


def coupling_residual(trace, eta_t_samples) -> float:
    """Max over the boundary grid of ``|v - d_t eta n|``."""
    trace = np.asarray(trace)
    n = _normal(trace.shape[0])
    return float(np.max(np.abs(trace - np.asarray(eta_t_samples)[:, None] * n)))


def guard(alpha: float, eta: SpectralField) -> float:
    """``alpha - sup |eta|`` (oversampled); negative means the run must stop."""
    return float(alpha - eta.sup_norm())


def fractional_rate(eta_t: SpectralField) -> float:
    return sobolev_norm(eta_t, 2 + FRACTIONAL_ORDER) ** 2


def piola_residual(mesh, domain, eta: SpectralField) -> float:
    """Max over quadrature points of the row divergence of the cofactor matrix.

    The cofactor field is interpolated in the quadratic finite element space
    and differentiated exactly.
    """
    from .geometry import transform_fields

    tf = transform_fields(domain, eta, mesh.nodes)
    B = tf.B
    div = np.zeros((mesh.n_quad, 2))
    for i in range(2):
        div[:, i] = mesh.Gx @ B[:, i, 0] + mesh.Gy @ B[:, i, 1]
    return float(np.max(np.abs(div)))


# ---------------------------------------------------------------------------
# Gronwall comparison


@dataclass(frozen=True)
class GronwallResult:
    T_tilde: float
    passed: bool
    margin: float
    violation_time: float | None
    blowup: bool
    blowup_time: float | None


def gronwall_check(times, f, h, c0: float, c1: float, p: float, blowup_level: float = 1e8,
                   rtol: float = 1e-10, atol: float = 1e-12) -> GronwallResult:
    """Check ``f(t) <= 2 f(0) + 2 int_0^t h`` up to the comparison time.

    The comparison ODE ``g' = h + c1 g^p``, ``g(0) = c0`` is integrated
    adaptively (``h`` linearly interpolated). ``T_tilde`` is the first time
    ``g`` exceeds ``2 g(0) + 2 int h``, or the horizon. ``margin`` is the
    smallest slack of the inequality on ``[0, T_tilde]``; ``violation_time``
    is the first sample where it fails on the whole horizon. A comparison
    solution reaching ``blowup_level``, or one the integrator cannot follow
    any further, is reported as a blow-up, not raised.
    """
    times = np.asarray(times, dtype=float)
    f = np.asarray(f, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), times.shape)
    if np.any(f < 0) or np.any(h < 0):
        raise ValueError("f and h must be nonnegative")
    if p < 1:
        raise ValueError("p must be at least 1")
    if c0 < 0 or c1 < 0:
        raise ValueError("c0 and c1 must be nonnegative")
    T = float(times[-1])
    t0 = float(times[0])

    def hfun(t):
        return float(np.interp(t, times, h))

    # augmented state: g and the running integral of h
    def rhs(t, z):
        g = min(max(z[0], 0.0), blowup_level)
        return [hfun(t) + c1 * g**p, hfun(t)]

    def exceed(t, z):
        return z[0] - (2 * c0 + 2 * z[1]) if t > t0 else -1.0

    exceed.terminal = False
    exceed.direction = 1

    def blow(t, z):
        return z[0] - blowup_level

    blow.terminal = True
    blow.direction = 1

    sol = solve_ivp(rhs, (t0, T), [c0, 0.0], events=[exceed, blow], rtol=rtol, atol=atol,
                    max_step=(T - t0) / 16 if T > t0 else np.inf)
    T_tilde = T
    blowup, blowup_time = False, None
    if sol.t_events[1].size:
        blowup, blowup_time = True, float(sol.t_events[1][0])
        T_tilde = blowup_time
    elif sol.status == -1:
        # step size collapsed: the comparison solution is blowing up here
        blowup, blowup_time = True, float(sol.t[-1])
        T_tilde = blowup_time
    if sol.t_events[0].size:
        T_tilde = min(T_tilde, float(sol.t_events[0][0]))
    cum_h = np.concatenate([[0.0], np.cumsum(0.5 * (h[1:] + h[:-1]) * np.diff(times))])
    slack = 2 * f[0] + 2 * cum_h - f
    window = times <= T_tilde + 1e-12
    margin = float(slack[window].min())
    bad = np.nonzero(slack < 0)[0]
    violation = None
    if bad.size:
        j = bad[0]
        if j > 0:
            # linear interpolation of the slack zero crossing
            s0, s1 = slack[j - 1], slack[j]
            violation = float(times[j - 1] + (times[j] - times[j - 1]) * s0 / (s0 - s1))
        else:
            violation = float(times[0])
    return GronwallResult(T_tilde, margin >= 0, margin, violation, blowup, blowup_time)
