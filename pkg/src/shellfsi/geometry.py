"""Reference geometry, tubular coordinates and the Hanzawa transform.

Everything pointwise is computed in the tubular chart ``Lambda(y, s) =
phi(y) + s n(y)``.  In that chart the Hanzawa map is

    Psi(Lambda(y, s)) = phi(y) + (s + eta(y) beta(s)) n(y),

so deformation gradients follow from the chain rule through ``Lambda``
without any finite differencing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmplitudeExceeded, NoConvergence, NonInvertible, OutOfTube
from .spectral import SpectralField

TWO_PI = 2.0 * np.pi


def _rot_out(v):
    """Rotate tangent vectors clockwise by 90 degrees (outward for ccw curves)."""
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class BoundaryCurve:
    """Counter-clockwise periodic curve ``phi: [0, 1) -> R^2``.

    Subclasses provide ``derivs(y)`` returning ``phi`` and its first three
    derivatives, each with shape ``y.shape + (2,)``.
    """

    def derivs(self, y):
        raise NotImplementedError

    def point(self, y):
        return self.derivs(np.asarray(y, dtype=float))[0]

    def frame(self, y):
        """Return ``phi, phi', n, n', n''`` at ``y``."""
        p, d1, d2, d3 = self.derivs(np.asarray(y, dtype=float))
        ell2 = np.sum(d1 * d1, axis=-1)
        ell = np.sqrt(ell2)
        tau = d1 / ell[..., None]
        n = _rot_out(tau)
        cr = _cross(d1, d2)
        kl = cr / ell2  # curvature times speed
        dkl = _cross(d1, d3) / ell2 - 2.0 * cr * np.sum(d1 * d2, axis=-1) / ell2**2
        dn = kl[..., None] * tau
        ddn = dkl[..., None] * tau - (kl**2)[..., None] * n
        return p, d1, n, dn, ddn

    def normal(self, y):
        return self.frame(y)[2]

    def closest(self, x):
        """Closest-point parameter for a single point ``x``: coarse scan, then Newton."""
        x = np.asarray(x, dtype=float)
        ys = np.arange(512) / 512
        pts = self.point(ys)
        y = ys[np.argmin(np.sum((pts - x) ** 2, axis=1))]
        for _ in range(50):
            p, d1, d2, _ = (a[0] for a in self.derivs(np.array([y])))
            g = np.dot(p - x, d1)
            dg = np.dot(d1, d1) + np.dot(p - x, d2)
            if dg <= 0:
                step = -np.sign(g) * 1e-3
            else:
                step = -g / dg
            step = float(np.clip(step, -1.0 / 512, 1.0 / 512))
            y = (y + step) % 1.0
            if abs(step) < 1e-15:
                break
        return float(y)


class UnitCircle(BoundaryCurve):
    """The unit circle ``(cos 2 pi y, sin 2 pi y)``."""

    def derivs(self, y):
        y = np.asarray(y, dtype=float)
        c, s = np.cos(TWO_PI * y), np.sin(TWO_PI * y)
        w = TWO_PI
        p = np.stack([c, s], axis=-1)
        d1 = w * np.stack([-s, c], axis=-1)
        d2 = -w**2 * p
        d3 = -w**2 * d1
        return p, d1, d2, d3

    def closest(self, x):
        x = np.asarray(x, dtype=float)
        return float(np.arctan2(x[1], x[0]) / TWO_PI % 1.0)


class FourierCurve(BoundaryCurve):
    """Curve with both components given as real periodic spectral fields."""

    def __init__(self, cx: SpectralField, cy: SpectralField):
        self.cx, self.cy = cx, cy

    @classmethod
    def ellipse(cls, a: float, b: float) -> "FourierCurve":
        return cls(SpectralField.from_modes([("cos", 1, a)], 1),
                   SpectralField.from_modes([("sin", 1, b)], 1))

    def derivs(self, y):
        y = np.asarray(y, dtype=float)
        return tuple(np.stack([self.cx.evaluate(y, d), self.cy.evaluate(y, d)], axis=-1)
                     for d in range(4))


# ---------------------------------------------------------------------------
# blend function


def _smoothstep(t):
    """Septic smoothstep on [0, 1] (three derivatives vanish at both ends).

    Returns value, first and second derivative. Three vanishing derivatives
    keep the transform fields in W^{3,inf}, which quadratic interpolation of
    the cofactor matrix needs for second-order convergence.
    """
    t = np.clip(t, 0.0, 1.0)
    v = t**4 * (35 - 84 * t + 70 * t**2 - 20 * t**3)
    d1 = 140 * t**3 * (1 - t) ** 3
    d2 = 420 * t**2 * (1 - t) ** 2 * (1 - 2 * t)
    return v, d1, d2


SMOOTHSTEP_SLOPE = 2.1875


@dataclass(frozen=True)
class ReferenceDomain:
    """Reference domain bounded by ``curve`` with tube width ``L``.

    ``alpha`` caps admissible shell amplitudes. The blend rises from 0 at
    ``s = -L`` to 1 at ``s = -plateau * L`` and stays 1 up to the boundary.
    """

    curve: BoundaryCurve = UnitCircle()
    L: float = 0.5
    alpha: float = 0.1
    plateau: float = 0.1

    def __post_init__(self):
        if not 0 < self.alpha < self.L:
            raise ValueError("alpha must satisfy 0 < alpha < L")
        if self.alpha * self.blend_slope_max > 0.9:
            raise ValueError("alpha * sup|beta'| must not exceed 0.9")

    @property
    def ramp(self) -> float:
        return (1.0 - self.plateau) * self.L

    @property
    def blend_slope_max(self) -> float:
        return SMOOTHSTEP_SLOPE / self.ramp

    def blend(self, s):
        """Return ``beta(s), beta'(s), beta''(s)``."""
        s = np.asarray(s, dtype=float)
        v, d1, d2 = _smoothstep((s + self.L) / self.ramp)
        return v, d1 / self.ramp, d2 / self.ramp**2

    @property
    def is_unit_disk(self) -> bool:
        return isinstance(self.curve, UnitCircle)


DEFAULT_DOMAIN = ReferenceDomain()


def default_alpha(L: float, plateau: float = 0.1, safety: float = 0.5) -> float:
    """Largest amplitude cap keeping ``alpha sup|beta'| <= 0.9``, scaled by ``safety``."""
    return safety * 0.9 * (1.0 - plateau) * L / SMOOTHSTEP_SLOPE


# ---------------------------------------------------------------------------
# tubular coordinates


@dataclass(frozen=True)
class TubularCoords:
    y: float
    s: float
    p: np.ndarray


def tubular_coords(domain: ReferenceDomain, x) -> TubularCoords:
    """Closest boundary parameter ``y``, signed distance ``s`` and foot point ``p``."""
    x = np.asarray(x, dtype=float)
    y = domain.curve.closest(x)
    p, _, n, _, _ = domain.curve.frame(np.array([y]))
    p, n = p[0], n[0]
    s = float(np.dot(x - p, n))
    if abs(s) >= domain.L or np.linalg.norm(x - p - s * n) > 1e-9:
        raise OutOfTube(f"point {x.tolist()} is not within distance L={domain.L} of the boundary")
    return TubularCoords(y=y, s=s, p=p)


def tube_coords_many(domain: ReferenceDomain, x):
    """Vectorised tubular coordinates; returns ``y, s, inside`` for points ``(P, 2)``.

    Points outside the tube get ``s = -inf``-like sentinel ``-2 L`` and are
    flagged ``inside = False``.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    if domain.is_unit_disk:
        r = np.hypot(x[:, 0], x[:, 1])
        y = np.arctan2(x[:, 1], x[:, 0]) / TWO_PI % 1.0
        s = r - 1.0
    else:
        y = np.array([domain.curve.closest(xi) for xi in x])
        p, _, n, _, _ = domain.curve.frame(y)
        s = np.sum((x - p) * n, axis=1)
        # closest point on a smooth curve inside the tube satisfies x = p + s n
        off = np.linalg.norm(x - p - s[:, None] * n, axis=1) > 1e-8
        s = np.where(off, -2 * domain.L, s)
    inside = np.abs(s) < domain.L
    s = np.where(inside, s, -2.0 * domain.L)
    return y, s, inside


# ---------------------------------------------------------------------------
# shell amplitude helpers


def _is_zero(field: SpectralField | None) -> bool:
    return field is None or not np.any(field.coeffs)


def check_amplitude(domain: ReferenceDomain, eta: SpectralField) -> float:
    sup = eta.sup_norm()
    if sup > domain.alpha:
        raise AmplitudeExceeded(f"|eta|_inf = {sup:.6g} exceeds alpha = {domain.alpha}")
    return sup


def hanzawa(domain: ReferenceDomain, eta: SpectralField, x):
    """Map points ``x`` of the reference domain to the deformed domain."""
    check_amplitude(domain, eta)
    x = np.asarray(x, dtype=float)
    if _is_zero(eta):
        return x.copy()
    flat = x.reshape(-1, 2)
    y, s, inside = tube_coords_many(domain, flat)
    out = flat.copy()
    if np.any(inside):
        yi, si = y[inside], s[inside]
        p, _, n, _, _ = domain.curve.frame(yi)
        beta = domain.blend(si)[0]
        out[inside] = p + (si + eta.evaluate(yi) * beta)[:, None] * n
    return out.reshape(x.shape)


def hanzawa_inverse(domain: ReferenceDomain, eta: SpectralField, xhat, tol: float = 1e-14,
                    max_iter: int = 100):
    """Invert the Hanzawa map fibre by fibre.

    Along the normal through ``phi(y)`` the map is ``s -> s + eta(y) beta(s)``,
    strictly increasing under the amplitude cap, so a safeguarded Newton
    iteration on that scalar equation suffices.
    """
    check_amplitude(domain, eta)
    xhat = np.asarray(xhat, dtype=float)
    if _is_zero(eta):
        return xhat.copy()
    flat = xhat.reshape(-1, 2)
    y, sh, inside = tube_coords_many(domain, flat)
    out = flat.copy()
    if not np.any(inside):
        return out.reshape(xhat.shape)
    yi, target = y[inside], sh[inside]
    e = eta.evaluate(yi)
    lo = np.full(target.shape, -domain.L)
    hi = np.full(target.shape, domain.L)
    s = target - e * domain.blend(target)[0]
    s = np.clip(s, lo, hi)
    for _ in range(max_iter):
        b, db, _ = domain.blend(s)
        g = s + e * b - target
        lo = np.where(g < 0, s, lo)
        hi = np.where(g > 0, s, hi)
        step = g / (1.0 + e * db)
        s_new = s - step
        bad = (s_new <= lo) | (s_new >= hi)
        s_new = np.where(bad, 0.5 * (lo + hi), s_new)
        if np.all(np.abs(s_new - s) <= tol * (1.0 + np.abs(s))):
            s = s_new
            break
        s = s_new
    else:
        raise NoConvergence("Hanzawa inverse did not converge")
    p, _, n, _, _ = domain.curve.frame(yi)
    out[inside] = p + s[:, None] * n
    return out.reshape(xhat.shape)


# ---------------------------------------------------------------------------
# transform fields


@dataclass(frozen=True)
class TransformFields:
    """Pointwise pullback data at a set of points.

    ``F`` is the deformation gradient, ``dF[p, i, m, j] = d_j F_im``; ``dtF``
    and ``dtJ`` are time derivatives (zero when no shell velocity is given).
    ``W`` is the domain-velocity field ``d_t Psi^{-1} o Psi``.
    """

    J: np.ndarray
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    F: np.ndarray
    Finv: np.ndarray
    dF: np.ndarray
    dJ: np.ndarray
    dtF: np.ndarray
    dtJ: np.ndarray

    @property
    def size(self) -> int:
        return self.J.size

    def piola(self, U, gradU=None):
        """Push ``U`` (values at the points) to ``B^{-T} U = F U / J``.

        With ``gradU[p, i, j] = d_j U_i`` also returns the gradient of the result.
        """
        V = np.einsum("pim,pm->pi", self.F, U) / self.J[:, None]
        if gradU is None:
            return V
        FU_j = np.einsum("pimj,pm->pij", self.dF, U) + np.einsum("pim,pmj->pij", self.F, gradU)
        gradV = FU_j / self.J[:, None, None] - V[:, :, None] * (self.dJ / self.J[:, None])[:, None, :]
        return V, gradV

    def piola_time_derivative(self, U):
        """``d_t(F / J) U`` for a time-independent ``U``."""
        dt = np.einsum("pim,pm->pi", self.dtF, U) / self.J[:, None]
        return dt - np.einsum("pim,pm->pi", self.F, U) * (self.dtJ / self.J**2)[:, None]

    def pull(self, V, gradV=None):
        """Inverse Piola map ``B^T V = J F^{-1} V`` (with gradient if requested)."""
        U = self.J[:, None] * np.einsum("pim,pm->pi", self.Finv, V)
        if gradV is None:
            return U
        # d_j (J Finv) = dJ_j Finv - J Finv dF_j Finv
        dFinv = -np.einsum("pab,pbcj,pcd->padj", self.Finv, self.dF, self.Finv)
        dM = self.dJ[:, None, None, :] * self.Finv[:, :, :, None] + self.J[:, None, None, None] * dFinv
        gradU = np.einsum("pimj,pm->pij", dM, V) + self.J[:, None, None] * np.einsum(
            "pim,pmj->pij", self.Finv, gradV)
        return U, gradU


def _chart_fields(domain: ReferenceDomain, y, s, z, dz, ddz, zt=None, dzt=None):
    """Deformation data in chart coordinates for arrays ``y, s`` (same shape).

    ``z, dz, ddz`` are the shell displacement and its y-derivatives at ``y``;
    ``zt, dzt`` the shell velocity and its y-derivative.
    """
    P = y.size
    p, d1, n, dn, ddn = domain.curve.frame(y)
    _, _, d2, _ = domain.curve.derivs(y)
    b, db, ddb = domain.blend(s)
    S = s + z * b

    def col(a):
        return a[:, :, None]

    # columns (d/dy, d/ds) of G = Psi o Lambda and Lambda
    Gy = d1 + S[:, None] * dn + (dz * b)[:, None] * n
    Gs = (1.0 + z * db)[:, None] * n
    Ly = d1 + s[:, None] * dn
    Ls = n
    DG = np.concatenate([col(Gy), col(Gs)], axis=2)
    DL = np.concatenate([col(Ly), col(Ls)], axis=2)
    DLinv = np.linalg.inv(DL)
    F = DG @ DLinv

    Gyy = d2 + S[:, None] * ddn + 2 * (dz * b)[:, None] * dn + (ddz * b)[:, None] * n
    Gys = (1.0 + z * db)[:, None] * dn + (dz * db)[:, None] * n
    Gss = (z * ddb)[:, None] * n
    Lyy = d2 + s[:, None] * ddn
    Lys = dn
    Lss = np.zeros_like(n)
    dDG = [np.concatenate([col(Gyy), col(Gys)], axis=2), np.concatenate([col(Gys), col(Gss)], axis=2)]
    dDL = [np.concatenate([col(Lyy), col(Lys)], axis=2), np.concatenate([col(Lys), col(Lss)], axis=2)]
    dF_chart = [(dDG[c] - F @ dDL[c]) @ DLinv for c in range(2)]
    # spatial derivative: d_j F = sum_c d_c F * (DL^{-1})_{c j}
    dF = np.einsum("cpim,pcj->pimj", np.stack(dF_chart), DLinv)

    J = np.linalg.det(F)
    Finv = np.linalg.inv(F)
    dJ = J[:, None] * np.einsum("pab,pbaj->pj", Finv, dF)

    if zt is None:
        dtF = np.zeros_like(F)
        dtJ = np.zeros(P)
        W = np.zeros((P, 2))
    else:
        Gt = (zt * b)[:, None] * n
        Gty = (dzt * b)[:, None] * n + (zt * b)[:, None] * dn
        Gts = (zt * db)[:, None] * n
        dtF = np.concatenate([col(Gty), col(Gts)], axis=2) @ DLinv
        dtJ = J * np.einsum("pab,pba->p", Finv, dtF)
        W = -np.einsum("pij,pj->pi", Finv, Gt)
    return F, Finv, J, dF, dJ, dtF, dtJ, W


def _assemble(F, Finv, J, dF, dJ, dtF, dtJ, W) -> TransformFields:
    FinvT = np.transpose(Finv, (0, 2, 1))
    A = J[:, None, None] * Finv @ FinvT
    B = J[:, None, None] * FinvT
    return TransformFields(J=J, A=A, B=B, W=W, F=F, Finv=Finv, dF=dF, dJ=dJ, dtF=dtF, dtJ=dtJ)


def identity_fields(P: int) -> TransformFields:
    eye = np.broadcast_to(np.eye(2), (P, 2, 2)).copy()
    z2 = np.zeros((P, 2, 2))
    return _assemble(eye, eye.copy(), np.ones(P), np.zeros((P, 2, 2, 2)), np.zeros((P, 2)),
                     z2, np.zeros(P), np.zeros((P, 2)))


def transform_fields_chart(domain: ReferenceDomain, eta: SpectralField, y, s,
                           eta_t: SpectralField | None = None, check: bool = True) -> TransformFields:
    """Transform fields at chart points ``(y, s)``; all points must lie in the tube."""
    if check:
        check_amplitude(domain, eta)
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if _is_zero(eta) and _is_zero(eta_t):
        return identity_fields(y.size)
    z, dz, ddz = (eta.evaluate(y, d) for d in range(3))
    zt = dzt = None
    if eta_t is not None:
        zt, dzt = eta_t.evaluate(y), eta_t.evaluate(y, 1)
    out = _chart_fields(domain, y, s, z, dz, ddz, zt, dzt)
    if out[2].min() <= 0:
        raise NonInvertible("deformation gradient determinant is not positive")
    return _assemble(*out)


class PointSet:
    """Points in the reference domain with their tubular coordinates precomputed."""

    def __init__(self, domain: ReferenceDomain, x):
        self.domain = domain
        self.x = np.asarray(x, dtype=float).reshape(-1, 2)
        self.y, self.s, self.inside = tube_coords_many(domain, self.x)
        self.index = np.flatnonzero(self.inside)
        self._phase = None
        self._Kphase = None

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def phases(self, K: int):
        """Cached ``exp(2 pi i k y)`` for in-tube points, ``k = -K..K``."""
        if self._Kphase != K:
            k = np.arange(-K, K + 1)
            self._phase = np.exp(2j * np.pi * np.multiply.outer(self.y[self.index], k))
            self._Kphase = K
        return self._phase


def _eval_cached(ps: PointSet, field: SpectralField, deriv: int):
    k = field.wavenumbers
    return (ps.phases(field.K) @ (field.coeffs * (2j * np.pi * k) ** deriv)).real


def transform_fields(domain: ReferenceDomain, eta: SpectralField, points,
                     eta_t: SpectralField | None = None, check: bool = True) -> TransformFields:
    """Transform fields at reference points (array ``(P, 2)`` or a :class:`PointSet`)."""
    if check:
        check_amplitude(domain, eta)
    ps = points if isinstance(points, PointSet) else PointSet(domain, points)
    P = ps.size
    F = np.broadcast_to(np.eye(2), (P, 2, 2)).copy()
    Finv = F.copy()
    J = np.ones(P)
    dF = np.zeros((P, 2, 2, 2))
    dJ = np.zeros((P, 2))
    dtF = np.zeros((P, 2, 2))
    dtJ = np.zeros(P)
    W = np.zeros((P, 2))
    idx = ps.index
    if _is_zero(eta) and _is_zero(eta_t):
        idx = idx[:0]  # exact identity
    if idx.size:
        if eta_t is not None and eta_t.K != eta.K:
            Kmax = max(eta.K, eta_t.K)
            eta, eta_t = eta.resized(Kmax), eta_t.resized(Kmax)
        z, dz, ddz = (_eval_cached(ps, eta, d) for d in range(3))
        zt = dzt = None
        if eta_t is not None:
            zt, dzt = _eval_cached(ps, eta_t, 0), _eval_cached(ps, eta_t, 1)
        out = _chart_fields(domain, ps.y[idx], ps.s[idx], z, dz, ddz, zt, dzt)
        for arr, val in zip((F, Finv, J, dF, dJ, dtF, dtJ, W), out):
            arr[idx] = val
    if J.min() <= 0:
        raise NonInvertible("deformation gradient determinant is not positive")
    return _assemble(F, Finv, J, dF, dJ, dtF, dtJ, W)


def boundary_fields(domain: ReferenceDomain, eta: SpectralField, y,
                    eta_t: SpectralField | None = None) -> TransformFields:
    """Transform fields on the reference boundary ``s = 0``."""
    y = np.asarray(y, dtype=float)
    return transform_fields_chart(domain, eta, y, np.zeros_like(y), eta_t, check=False)


def normal_invariance_check(domain: ReferenceDomain, eta: SpectralField, samples: int = 257) -> float:
    """Largest deviation ``|d_n Psi - n|`` over boundary samples."""
    y = np.arange(samples) / samples
    tf = boundary_fields(domain, eta, y)
    n = domain.curve.normal(y)
    dn = np.einsum("pij,pj->pi", tf.F, n)
    return float(np.max(np.linalg.norm(dn - n, axis=1)))


def boundary_flux_weight(domain: ReferenceDomain, eta_values, y):
    """``n . n_eta |d_y phi_eta|``: normal-flux density of the deformed boundary per unit ``y``."""
    _, d1, n, dn, _ = domain.curve.frame(y)
    # d_y phi_eta = phi' + eta' n + eta n'; the eta' n part is orthogonal after rotation
    tang = d1 + np.asarray(eta_values)[..., None] * dn
    return np.sum(n * _rot_out(tang), axis=-1)

