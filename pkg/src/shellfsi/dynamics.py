"""Galerkin ODE for the transformed fluid-shell system and its time stepping.

The unknown is the coefficient vector ``alpha`` of the ansatz

    v(t) = B^{-T} sum_k alpha_k X_k,      d_t eta = J_b^{-1} sum_k alpha_k X_k,

where ``B`` and ``J_b`` (boundary determinant) belong to a prescribed
geometry trajectory ``zeta``. Each step is an implicit midpoint step

    Abar (alpha+ - alpha) / dt = F(t_half, alpha_half, eta_half),
    eta+ = eta + dt trunc_K(J_b^{-1}(t_half) sum_k alpha_half_k X_k),

with ``Abar`` the average of the mass matrices at both ends. With this
choice the change of total energy over a step equals ``dt alpha_half . F``
plus a quarter of the mass-matrix increment tested with both end states,
exactly; the energy-balance defect therefore only measures solver error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .basis import GalerkinBasis
from .diagnostics import (COLUMN_NAMES, FRACTIONAL_ORDER, accel_energy, coupling_residual,
                          divergence_residual, forcing_H, guard)
from .errors import (AmplitudeExceeded, IncompatibleData, NoContraction, NoConvergence,
                     NonInvertible, NotSPD, SelfIntersection)
from .forcing import Forcing
from .geometry import (PointSet, ReferenceDomain, boundary_fields, boundary_flux_weight,
                       check_amplitude, hanzawa, transform_fields)
from .spectral import TWO_PI, SpectralField, gaussian_multiplier, sobolev_norm, uniform_grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Physics:
    rho_f: float = 1.0
    rho_s: float = 1.0
    mu: float = 1.0
    stiffness: float = 1.0


# ---------------------------------------------------------------------------
# prescribed shell trajectories


@dataclass
class ShellTrajectory:
    """Shell displacement samples with time derivatives; cubic Hermite in time.

    ``coeffs`` and ``rates`` have shape ``(N, 2K+1)`` (complex Fourier data).
    """

    times: np.ndarray
    coeffs: np.ndarray
    rates: np.ndarray

    @property
    def K(self) -> int:
        return self.coeffs.shape[1] // 2

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @classmethod
    def constant(cls, eta: SpectralField, T: float) -> "ShellTrajectory":
        c = np.array([eta.coeffs, eta.coeffs])
        return cls(np.array([0.0, float(T)]), c, np.zeros_like(c))

    @classmethod
    def from_function(cls, fn, fn_t, times, K: int) -> "ShellTrajectory":
        """Sample ``fn(t, y)`` and ``fn_t(t, y)`` at ``times``."""
        times = np.asarray(times, dtype=float)
        c = np.array([SpectralField.from_function(lambda y, t=t: fn(t, y), K).coeffs for t in times])
        r = np.array([SpectralField.from_function(lambda y, t=t: fn_t(t, y), K).coeffs for t in times])
        return cls(times, c, r)

    def _locate(self, t):
        i = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        return i

    def at(self, t: float):
        """Return ``(zeta(t), d_t zeta(t))`` as spectral fields."""
        i = self._locate(t)
        t0, t1 = self.times[i], self.times[i + 1]
        h = t1 - t0
        s = (t - t0) / h
        h00, h10 = 2 * s**3 - 3 * s**2 + 1, s**3 - 2 * s**2 + s
        h01, h11 = -2 * s**3 + 3 * s**2, s**3 - s**2
        d00, d10 = (6 * s**2 - 6 * s) / h, 3 * s**2 - 4 * s + 1
        d01, d11 = (-6 * s**2 + 6 * s) / h, 3 * s**2 - 2 * s
        c0, c1, r0, r1 = self.coeffs[i], self.coeffs[i + 1], self.rates[i], self.rates[i + 1]
        val = h00 * c0 + h10 * h * r0 + h01 * c1 + h11 * h * r1
        rate = d00 * c0 + d10 * r0 + d01 * c1 + d11 * r1
        return SpectralField(val), SpectralField(rate)

    def truncated(self, T: float) -> "ShellTrajectory":
        keep = self.times <= T + 1e-12
        return ShellTrajectory(self.times[keep], self.coeffs[keep], self.rates[keep])

    def resized(self, K: int) -> "ShellTrajectory":
        def rs(arr):
            out = np.zeros((arr.shape[0], 2 * K + 1), dtype=complex)
            k = min(K, self.K)
            out[:, K - k:K + k + 1] = arr[:, self.K - k:self.K + k + 1]
            return out

        return ShellTrajectory(self.times, rs(self.coeffs), rs(self.rates))


def _temporal_gaussian(values, times, radius):
    """Discrete Gaussian smoothing along axis 0 with reflection at both ends."""
    N = times.size
    if N < 2 or radius <= 0:
        return values
    dt = float(np.mean(np.diff(times)))
    sigma = radius / dt
    half = int(np.ceil(4 * sigma))
    if half == 0:
        return values
    offs = np.arange(-half, half + 1)
    w = np.exp(-0.5 * (offs / sigma) ** 2)
    w /= w.sum()
    out = np.zeros_like(values)
    for o, wo in zip(offs, w):
        idx = np.arange(N) + o
        # reflect without repeating the end sample
        idx = np.abs(idx)
        idx = np.where(idx > N - 1, 2 * (N - 1) - idx, idx)
        idx = np.clip(idx, 0, N - 1)
        out += wo * values[idx]
    return out


def mollify_geometry(traj: ShellTrajectory, radius: float, time_radius: float | None = None) -> ShellTrajectory:
    """Smooth a trajectory in space (Gaussian Fourier multiplier) and time.

    ``time_radius`` defaults to ``radius``. A zero radius is the identity.
    """
    if radius == 0 and not time_radius:
        return traj
    mult = gaussian_multiplier(traj.K, radius)
    c = traj.coeffs * mult
    r = traj.rates * mult
    tr = radius if time_radius is None else time_radius
    c = _temporal_gaussian(c, traj.times, tr)
    r = _temporal_gaussian(r, traj.times, tr)
    return ShellTrajectory(traj.times, c, r)


# ---------------------------------------------------------------------------
# geometry-dependent operators


def _apply(M, X):
    """Pointwise matrix-vector product ``M[..., p, i, m] X[..., p, m]``."""
    return np.matmul(M, X[..., None])[..., 0]


def _gram(a, b, w):
    """``G[k, l] = sum_p w_p a[k, p, ...] . b[l, p, ...]``."""
    k, P = a.shape[:2]
    aw = (a.reshape(k, P, -1) * w[None, :, None]).reshape(k, -1)
    return aw @ b.reshape(b.shape[0], -1).T


@dataclass
class GeometryData:
    """Everything in the ODE that depends only on the geometry at one instant."""

    t: float
    zeta: SpectralField
    zeta_t: SpectralField
    tf: object
    tfb: object
    V: np.ndarray
    gV: np.ndarray
    Y: np.ndarray
    Yhat: np.ndarray
    mass: np.ndarray
    minJ: float
    dV: np.ndarray | None = None
    dY: np.ndarray | None = None
    linear: np.ndarray | None = None
    parts: dict = field(default_factory=dict)


class GalerkinSystem:
    """Galerkin ODE assembled on a fixed mesh for a given basis and physics."""

    def __init__(self, basis: GalerkinBasis, domain: ReferenceDomain, physics: Physics = Physics(),
                 forcing: Forcing | None = None, eps: float = 0.0, grid: int | None = None):
        self.basis = basis
        self.mesh = basis.mesh
        self.domain = domain
        self.physics = physics
        self.forcing = forcing or Forcing.zero()
        self.eps = float(eps)
        self.K = basis.K
        self.n = basis.n
        m = grid or 4 * self.K + 1
        if m % 2 == 0:
            m += 1
        self.m = m
        self.y = uniform_grid(m)
        self.points = PointSet(domain, self.mesh.quad_points)
        self.w = self.mesh.weights
        modes = basis.modes
        self.Xq, self.gXq = self.mesh.eval_vector_many(modes)
        self.Xs = basis.shell_samples(m)
        self.normal = np.stack([np.cos(TWO_PI * self.y), np.sin(TWO_PI * self.y)], axis=1)
        k = np.fft.fftfreq(m, 1.0 / m)
        self.kgrid = k
        self.lowpass = np.abs(k) <= self.K
        self.k4 = (TWO_PI * k) ** 4

    # spectral helpers -------------------------------------------------

    def to_grid_hat(self, samples):
        """Normalised DFT of grid samples along the last axis."""
        return np.fft.fft(samples, axis=-1) / self.m

    def hat_to_field(self, hat) -> SpectralField:
        K = self.K
        c = np.zeros(2 * K + 1, dtype=complex)
        c[K:] = hat[: K + 1]
        c[:K] = hat[self.m - K:]
        return SpectralField(c)

    def field_to_hat(self, u: SpectralField):
        u = u.resized(min(u.K, (self.m - 1) // 2))
        K = u.K
        hat = np.zeros(self.m, dtype=complex)
        hat[: K + 1] = u.coeffs[K:]
        if K:
            hat[self.m - K:] = u.coeffs[:K]
        return hat

    # geometry ---------------------------------------------------------

    def geometry(self, t: float, zeta: SpectralField, zeta_t: SpectralField, rates: bool = True) -> GeometryData:
        ph = self.physics
        try:
            check_amplitude(self.domain, zeta)
        except AmplitudeExceeded as exc:
            raise SelfIntersection(f"geometry left the admissible band at t={t:.6g}: {exc}", t=t) from exc
        tf = transform_fields(self.domain, zeta, self.points, zeta_t if rates else None, check=False)
        tfb = boundary_fields(self.domain, zeta, self.y, zeta_t if rates else None)
        J = tf.J
        V = _apply(tf.F, self.Xq) / J[None, :, None]
        P = J.size
        dF = tf.dF.transpose(0, 1, 3, 2).reshape(P, 4, 2)
        dFX = _apply(dF, self.Xq).reshape(-1, P, 2, 2) + np.matmul(tf.F, self.gXq)
        gV = dFX / J[None, :, None, None] - V[..., None] * (tf.dJ / J[:, None])[None, :, None, :]
        Jb = tfb.J
        Y = self.Xs / Jb[None, :]
        Yhat = self.to_grid_hat(Y)
        wJ = self.w * J
        mass = ph.rho_f * _gram(V, V, wJ) + ph.rho_s * (Y @ Y.T) / self.m
        mass = 0.5 * (mass + mass.T)
        geo = GeometryData(t=t, zeta=zeta, zeta_t=zeta_t, tf=tf, tfb=tfb, V=V, gV=gV, Y=Y, Yhat=Yhat,
                           mass=mass, minJ=float(min(J.min(), Jb.min())))
        if rates:
            geo.dV = (_apply(tf.dtF, self.Xq) / J[None, :, None]
                      - V * (tf.dtJ / J)[None, :, None])
            geo.dY = -self.Xs * (tfb.dtJ / Jb**2)[None, :]
            self._linear_parts(geo)
        return geo

    def _linear_parts(self, geo: GeometryData):
        ph = self.physics
        tf = geo.tf
        V, gV, Y = geo.V, geo.gV, geo.Y
        wJ = self.w * tf.J
        m = self.m
        N = ph.rho_f * _gram(V, geo.dV, wJ) + ph.rho_s * (Y @ geo.dY.T) / m
        T = ph.rho_f * _gram(V, _apply(gV, tf.W), wJ)
        zt = geo.zeta_t.to_samples(m) if geo.zeta_t.K * 2 + 1 <= m else geo.zeta_t.evaluate(self.y)
        mz = boundary_flux_weight(self.domain, geo.zeta.to_samples(m), self.y)
        Bnd = ph.rho_f * 0.5 * ((Y * (zt * mz)[None, :]) @ Y.T) / m
        Vis = ph.mu * _gram(gV, np.matmul(gV, tf.A), self.w)
        dyY = np.fft.ifft(self.to_grid_hat(Y) * m * (2j * np.pi * self.kgrid), axis=-1).real
        D = self.eps * (dyY @ dyY.T) / m
        Yh = geo.Yhat * self.lowpass[None, :]
        Bil = ph.stiffness * (Yh * self.k4[None, :]) @ np.conj(Yh).T
        Bil = 0.5 * (Bil + Bil.T).real
        geo.parts = {"N": N, "T": T, "Bnd": Bnd, "Vis": Vis, "D": D, "Bil": Bil}
        geo.linear = N + T + Bnd + Vis + D

    # nonlinear terms --------------------------------------------------

    def convection(self, geo: GeometryData, z, jacobian: bool = False):
        """Skew-symmetric convection pair and (optionally) its Jacobian."""
        rho = self.physics.rho_f
        w = self.w
        V, gV = geo.V, geo.gV
        v = np.tensordot(z, V, 1)
        gv = np.tensordot(z, gV, 1)
        u = np.tensordot(z, self.Xq, 1)
        a = _apply(gv, u)
        # H[k, p, m] = sum_i v_i d_m V_k,i
        H = np.matmul(v[:, None, :], gV)[:, :, 0, :]
        t1 = _gram(V, a[None], w)[:, 0]
        t2 = _gram(H, u[None], w)[:, 0]
        C = rho * 0.5 * (t1 - t2)
        if not jacobian:
            return C
        GW = _apply(gV, u)
        GX = _apply(gv, self.Xq)
        M1 = _gram(V, GW, w)
        M2 = _gram(V, GX, w)
        M3 = _gram(H, self.Xq, w)
        return C, rho * 0.5 * (M1 + M2 - M3 - M1.T)

    def bilaplacian(self, geo: GeometryData, eta: SpectralField):
        """``stiffness * int Delta eta Delta(J_b^{-1} X_k)`` for every ``k``."""
        eh = self.field_to_hat(eta)
        Yh = geo.Yhat * self.lowpass[None, :]
        return self.physics.stiffness * (np.conj(Yh) @ (self.k4 * eh)).real

    def forcing_vector(self, geo: GeometryData, t: float):
        out = np.zeros(self.n)
        fc = self.forcing
        if fc.has_fluid:
            x = hanzawa(self.domain, geo.zeta, self.mesh.quad_points)
            fq = fc.f(t, x)
            out += np.einsum("p,pi,kpi->k", self.w * geo.tf.J, fq, geo.V)
        if fc.has_shell:
            g = fc.g(t, self.y)
            out += geo.Y @ g / self.m
        return out

    def eta_increment(self, geo: GeometryData, z) -> SpectralField:
        """``trunc_K(J_b^{-1} sum z_k X_k)``."""
        return self.hat_to_field(z @ geo.Yhat)

    def rhs(self, geo: GeometryData, z, eta: SpectralField, t: float):
        """``F`` at a given state (used for diagnostics and tests)."""
        return (-geo.linear @ z - self.convection(geo, z) - self.bilaplacian(geo, eta)
                + self.forcing_vector(geo, t))

    # energies ---------------------------------------------------------

    def energy(self, geo: GeometryData, alpha, eta: SpectralField) -> float:
        el = 0.5 * self.physics.stiffness * sobolev_norm(eta, 2) ** 2
        return 0.5 * float(alpha @ geo.mass @ alpha) + el


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class StepResult:
    alpha: np.ndarray
    eta: SpectralField
    geo_end: GeometryData
    geo_mid: GeometryData
    z: np.ndarray
    iterations: int
    defect: float
    work: dict


def step(system: GalerkinSystem, traj: ShellTrajectory, t: float, dt: float, alpha, eta: SpectralField,
         geo_start: GeometryData | None = None, tol: float = 1e-12, max_iter: int = 50) -> StepResult:
    """One implicit-midpoint step of the Galerkin ODE (Newton with exact Jacobian)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    alpha = np.asarray(alpha, dtype=float)
    if geo_start is None:
        geo_start = system.geometry(t, *traj.at(t), rates=False)
    th = t + 0.5 * dt
    geo_mid = system.geometry(th, *traj.at(th))
    geo_end = system.geometry(t + dt, *traj.at(t + dt), rates=False)
    Abar = 0.5 * (geo_start.mass + geo_end.mass)
    L = geo_mid.linear
    Bil = geo_mid.parts["Bil"]
    F_ext = system.forcing_vector(geo_mid, th)
    b_eta = system.bilaplacian(geo_mid, eta)
    lin = 2.0 / dt * Abar + L + 0.5 * dt * Bil
    rhs_const = 2.0 / dt * Abar @ alpha - b_eta + F_ext
    z = alpha.copy()
    it = 0
    for it in range(1, max_iter + 1):
        C, dC = system.convection(geo_mid, z, jacobian=True)
        R = lin @ z + C - rhs_const
        try:
            dz = np.linalg.solve(lin + dC, -R)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(f"singular Newton matrix at t={t:.6g}") from exc
        z = z + dz
        if np.linalg.norm(dz) <= tol * (1.0 + np.linalg.norm(z)):
            break
    else:
        raise NoConvergence(f"Newton did not converge in {max_iter} iterations at t={t:.6g}")
    alpha_new = 2 * z - alpha
    eta_new = eta + dt * system.eta_increment(geo_mid, z)
    eta_new = SpectralField(eta_new.resized(system.K).coeffs)

    # energy bookkeeping: exact discrete identity for the midpoint scheme
    parts = geo_mid.parts
    C = system.convection(geo_mid, z)
    # elastic work cancels exactly against the elastic energy change
    F_total = -L @ z - C + F_ext
    dA = geo_end.mass - geo_start.mass
    E0 = system.energy(geo_start, alpha, eta)
    E1 = system.energy(geo_end, alpha_new, eta_new)
    mass_term = 0.25 * (alpha_new @ dA @ alpha_new + alpha @ dA @ alpha)
    defect = E1 - E0 - dt * float(z @ F_total) - mass_term
    work = {
        "viscous": dt * float(z @ parts["Vis"] @ z),
        "regularization": dt * float(z @ parts["D"] @ z),
        "geometry": mass_term - dt * float(z @ (parts["N"] + parts["T"] + parts["Bnd"]) @ z),
        "convection": -dt * float(z @ C),
        "forcing": dt * float(z @ F_ext),
        "energy_before": E0,
        "energy_after": E1,
    }
    return StepResult(alpha_new, eta_new, geo_end, geo_mid, z, it, float(defect), work)


# ---------------------------------------------------------------------------
# runs


DIAGNOSTIC_COLUMNS = COLUMN_NAMES


@dataclass
class RunResult:
    times: list
    alphas: list
    etas: list
    eta_rates: list
    rows: list
    fluid: list
    fluid_grad_sq: list
    reason: str | None = None
    message: str = ""
    stop_time: float | None = None
    work: list = field(default_factory=list)
    rejected: SelfIntersection | None = None

    def shell_trajectory(self) -> ShellTrajectory:
        return ShellTrajectory(np.array(self.times), np.array([e.coeffs for e in self.etas]),
                               np.array([r.coeffs for r in self.eta_rates]))

    @property
    def final_alpha(self) -> np.ndarray:
        return self.alphas[-1]

    @property
    def final_eta(self) -> SpectralField:
        return self.etas[-1]


def _state_row(system: GalerkinSystem, geo: GeometryData, t, alpha, eta, cumul, defect, iters):
    rate = alpha @ geo.Y
    v = np.einsum("k,kpi->pi", alpha, geo.V)
    gv = np.einsum("k,kpij->pij", alpha, geo.gV)
    w = system.w
    vb = geo.tfb.piola((alpha @ system.Xs)[:, None] * system.normal)
    x = hanzawa(system.domain, geo.zeta, system.mesh.quad_points) if system.forcing.has_fluid else None
    row = {
        "t": t,
        "shell_kinetic": float(np.mean(rate**2)),
        "shell_elastic": sobolev_norm(eta, 2) ** 2,
        "fluid_l2": float(np.sum(w[:, None] * v**2)),
        "energy": system.energy(geo, alpha, eta),
        "viscous_dissipation": cumul["visc"],
        "regularization_dissipation": cumul["eps"],
        "fractional_dissipation": cumul["frac"],
        "accel_energy": np.nan,
        "forcing_H": forcing_H(system.forcing, t, x, geo.tf.F, w, system.y),
        "div_residual": divergence_residual(geo.tf.B, gv, w),
        "coupling_residual": coupling_residual(vb, rate),
        "balance_defect": defect,
        "guard_margin": guard(system.domain.alpha, eta),
        "min_J": geo.minJ,
        "newton_iterations": iters,
    }
    return row, v, float(np.sum(w[:, None, None] * gv**2)), rate


def _min_jacobian(system: GalerkinSystem, eta: SpectralField) -> float:
    tf = transform_fields(system.domain, eta, system.points, check=False)
    tfb = boundary_fields(system.domain, eta, system.y)
    return float(min(tf.J.min(), tfb.J.min()))


def run_decoupled(system: GalerkinSystem, traj: ShellTrajectory, eta0: SpectralField, alpha0, T: float,
                  dt: float, tol: float = 1e-12, max_iter: int = 50) -> RunResult:
    """Integrate the Galerkin ODE on ``[0, T]`` with geometry frozen to ``traj``.

    A step whose new shell amplitude leaves the admissible band is rejected
    and the run stops with reason ``SelfIntersection``; everything up to the
    last accepted step is returned.
    """
    nsteps = int(round(T / dt))
    if nsteps < 1 or abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("horizon must be a positive multiple of dt")
    eta = SpectralField(eta0.resized(system.K).coeffs)
    alpha = np.asarray(alpha0, dtype=float).copy()
    res = RunResult([], [], [], [], [], [], [])
    cumul = {"visc": 0.0, "eps": 0.0, "frac": 0.0}
    try:
        check_amplitude(system.domain, eta)
        geo = system.geometry(0.0, *traj.at(0.0), rates=False)
    except (AmplitudeExceeded, SelfIntersection, NonInvertible) as exc:
        res.reason, res.message, res.stop_time = "SelfIntersection", str(exc), 0.0
        return res
    _check_mass(geo)
    row, v, g2, rate = _state_row(system, geo, 0.0, alpha, eta, cumul, 0.0, 0)
    _append(system, res, 0.0, alpha, eta, row, v, g2, geo)
    t = 0.0
    for i in range(nsteps):
        try:
            st = step(system, traj, t, dt, alpha, eta, geo_start=geo, tol=tol, max_iter=max_iter)
        except (SelfIntersection, NonInvertible) as exc:
            res.reason, res.message, res.stop_time = "SelfIntersection", str(exc), t
            log.info("run stopped at t=%.6g: %s", t, exc)
            return res
        t_new = (i + 1) * dt
        sup = st.eta.sup_norm()
        if sup > system.domain.alpha:
            margin = system.domain.alpha - sup
            res.reason = "SelfIntersection"
            res.message = (f"shell amplitude {sup:.6g} exceeds alpha={system.domain.alpha} at t={t_new:.6g}")
            res.stop_time = t
            res.rejected = SelfIntersection(res.message, t=t_new, margin=margin)
            return res
        _check_mass(st.geo_end)
        minJ = _min_jacobian(system, st.eta)
        if minJ <= 0:
            res.reason, res.stop_time = "SelfIntersection", t
            res.message = f"fold-over detected at t={t_new:.6g}"
            return res
        zrate = st.z @ st.geo_mid.Y
        zfield = SpectralField.from_samples(zrate)
        cumul["visc"] += dt * float(np.sum(system.w[:, None, None]
                                           * np.einsum("k,kpij->pij", st.z, st.geo_mid.gV) ** 2))
        cumul["eps"] += st.work["regularization"]
        cumul["frac"] += dt * sobolev_norm(zfield, 2 + FRACTIONAL_ORDER) ** 2
        alpha, eta, geo, t = st.alpha, st.eta, st.geo_end, t_new
        row, v, g2, rate = _state_row(system, geo, t, alpha, eta, cumul, st.defect, st.iterations)
        row["min_J"] = min(row["min_J"], minJ)
        _append(system, res, t, alpha, eta, row, v, g2, geo)
        res.work.append(st.work)
    fill_accel_energy(system, res)
    return res


def _append(system, res, t, alpha, eta, row, v, g2, geo):
    res.times.append(t)
    res.alphas.append(alpha.copy())
    res.etas.append(eta)
    res.eta_rates.append(system.hat_to_field(alpha @ geo.Yhat))
    res.rows.append(row)
    res.fluid.append(v)
    res.fluid_grad_sq.append(g2)


def _check_mass(geo: GeometryData):
    A = geo.mass
    if np.max(np.abs(A - A.T)) > 1e-12 * max(1.0, np.max(np.abs(A))):
        raise NotSPD("mass matrix is not symmetric")
    if A.size and np.linalg.eigvalsh(A).min() <= 0:
        raise NotSPD(f"mass matrix is not positive definite at t={geo.t:.6g}")


def fill_accel_energy(system: GalerkinSystem, res: RunResult):
    """Fill the acceleration-energy column from the accepted history (needs 3 states)."""
    if len(res.times) < 3:
        return
    m = system.m
    rates = np.array([r.to_samples(m) for r in res.eta_rates])
    E = accel_energy(np.array(res.times), rates, np.array(res.fluid), system.w,
                     np.array(res.fluid_grad_sq))
    for row, e in zip(res.rows, E):
        row["accel_energy"] = float(e)


# ---------------------------------------------------------------------------
# initial data


def initial_coefficients(system: GalerkinSystem, zeta0: SpectralField, eta_star: SpectralField,
                         v0=None) -> np.ndarray:
    """Galerkin coefficients of the initial data at geometry ``zeta0``.

    Coupled-mode coefficients project ``J_b eta_star`` onto the shell modes;
    fluid-mode coefficients are gradient inner products of the Stokes modes
    with the pulled-back initial velocity ``v0`` (a :class:`QuadField`), or
    zero when ``v0`` is omitted (velocity lifted from ``eta_star``).
    """
    from .basis import project_fluid, shell_coefficients

    geo = system.geometry(0.0, zeta0, SpectralField.zeros(zeta0.K), rates=False)
    if v0 is None:
        c = shell_coefficients(system.basis, geo.tfb.J, eta_star.to_samples(system.m))
        c[~system.basis.is_shell] = 0.0
        return c
    tfb = boundary_fields(system.domain, zeta0, uniform_grid(v0.trace.shape[0]))
    c, _ = project_fluid(system.basis, geo.tf, tfb, v0)
    return c


def check_compatibility(v0, eta_star: SpectralField, tol: float = 1e-8):
    """Raise when the initial velocity trace differs from ``eta_star n``."""
    m = v0.trace.shape[0]
    y = uniform_grid(m)
    n = np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=1)
    gap = float(np.max(np.abs(v0.trace - eta_star.evaluate(y)[:, None] * n)))
    if gap > tol:
        raise IncompatibleData(f"initial velocity trace differs from eta_* n by {gap:.3e}")
    return gap


def regularize_initial_data(system: GalerkinSystem, eta0: SpectralField, eta_star: SpectralField,
                            v0=None, eps: float = 0.0, tol: float = 1e-8):
    """Mollify initial data and restore the kinematic compatibility.

    Shell data are smoothed with the Gaussian multiplier of radius ``eps``.
    The velocity is re-projected onto the Galerkin space at the smoothed
    geometry after its boundary trace is replaced by ``eta_star_eps n``, and
    ``eta_star_eps`` is set to the trace of that projection so both agree to
    round-off. ``eps = 0`` returns the data unchanged.
    """
    from .basis import QuadField, project_fluid, reconstruct

    if v0 is not None:
        check_compatibility(v0, eta_star, tol)
    if eps == 0:
        return eta0, eta_star, v0
    from .spectral import mollify

    e0 = mollify(eta0, eps)
    es = mollify(eta_star, eps)
    geo = system.geometry(0.0, e0, SpectralField.zeros(e0.K), rates=False)
    if v0 is None:
        m = system.m
        y = system.y
        n = system.normal
        v0 = QuadField(np.zeros((system.mesh.n_quad, 2)), np.zeros((system.mesh.n_quad, 2, 2)),
                       es.evaluate(y)[:, None] * n)
    else:
        m = v0.trace.shape[0]
        y = uniform_grid(m)
        n = np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=1)
        v0 = QuadField(v0.values, v0.grads, es.evaluate(y)[:, None] * n)
    tfb = boundary_fields(system.domain, e0, uniform_grid(m))
    coef, v_eps = project_fluid(system.basis, geo.tf, tfb, v0)
    trace_n = np.sum(v_eps.trace * n, axis=1)
    es = SpectralField.from_samples(trace_n, (m - 1) // 2)
    return e0, es, v_eps


# ---------------------------------------------------------------------------
# fixed-point coupling


def shell_distance(a: ShellTrajectory, b: ShellTrajectory) -> float:
    """``sup_t (|d_t(a - b)|_{L^2} + |Delta_y (a - b)|_{L^2})`` over common samples."""
    N = min(a.times.size, b.times.size)
    K = max(a.K, b.K)
    a, b = a.resized(K), b.resized(K)
    k = np.arange(-K, K + 1)
    lap = (TWO_PI * k) ** 2
    dc = a.coeffs[:N] - b.coeffs[:N]
    dr = a.rates[:N] - b.rates[:N]
    vals = np.sqrt(np.sum(np.abs(dr) ** 2, axis=1)) + np.sqrt(np.sum(np.abs(lap * dc) ** 2, axis=1))
    return float(vals.max()) if N else 0.0


@dataclass
class CouplingReport:
    result: RunResult
    distances: list
    factors: list
    iterations: int
    converged: bool
    horizon: float
    reason: str | None = None
    message: str = ""


def run_coupled(system: GalerkinSystem, eta0: SpectralField, eta_star: SpectralField, T: float, dt: float,
                max_outer: int = 20, tol: float = 1e-8, theta: float = 1.0, mollify_radius: float = 0.0,
                v0=None, raise_on_failure: bool = False) -> CouplingReport:
    """Fixed-point iteration ``zeta -> eta[zeta]`` starting from the constant ``eta0``.

    The run horizon shrinks to the stop time whenever an iterate stops on
    the amplitude guard. Contraction factors are ratios of successive
    iterate distances.
    """
    zeta = ShellTrajectory.constant(SpectralField(eta0.resized(system.K).coeffs), T)
    distances, factors = [], []
    horizon = T
    guard_reason, guard_msg = None, ""
    result = None
    for k in range(1, max_outer + 1):
        geom = mollify_geometry(zeta, mollify_radius) if mollify_radius > 0 else zeta
        alpha0 = initial_coefficients(system, geom.at(0.0)[0], eta_star, v0)
        result = run_decoupled(system, geom, eta0, alpha0, horizon, dt)
        if result.reason == "SelfIntersection":
            guard_reason, guard_msg = result.reason, result.message
            stop = result.stop_time or 0.0
            if stop <= 0:
                return CouplingReport(result, distances, factors, k, False, 0.0, guard_reason, guard_msg)
            horizon = stop
        new = result.shell_trajectory().truncated(horizon)
        if theta != 1.0:
            old = zeta.truncated(horizon) if zeta.times.size > 2 else _resample(zeta, new.times)
            new = ShellTrajectory(new.times, theta * new.coeffs + (1 - theta) * _resample(old, new.times).coeffs,
                                  theta * new.rates + (1 - theta) * _resample(old, new.times).rates)
        d = shell_distance(new, _resample(zeta, new.times))
        distances.append(d)
        if len(distances) > 1 and distances[-2] > 0:
            factors.append(d / distances[-2])
        log.info("outer iteration %d: distance %.3e", k, d)
        zeta = new
        if d < tol and result.reason is None:
            return CouplingReport(result, distances, factors, k, True, horizon, guard_reason, guard_msg)
        if d < tol and result.reason is not None:
            # guard-limited horizon reached a fixed point
            return CouplingReport(result, distances, factors, k, True, horizon, guard_reason, guard_msg)
    msg = f"no convergence after {max_outer} outer iterations; factors {factors}"
    if raise_on_failure:
        raise NoContraction(msg)
    return CouplingReport(result, distances, factors, max_outer, False, horizon, "NoContraction", msg)


def _resample(traj: ShellTrajectory, times) -> ShellTrajectory:
    """Evaluate a trajectory at ``times`` (Hermite interpolation)."""
    c, r = [], []
    for t in times:
        a, b = traj.at(float(t))
        c.append(a.resized(traj.K).coeffs)
        r.append(b.resized(traj.K).coeffs)
    return ShellTrajectory(np.asarray(times, dtype=float), np.array(c), np.array(r))
