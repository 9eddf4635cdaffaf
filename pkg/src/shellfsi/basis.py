"""Two-family Galerkin basis: Stokes eigenmodes and lifted shell modes.

Pure fluid modes are Dirichlet eigenfunctions of the discrete Stokes
operator. Coupled modes pair a real Fourier mode ``X`` of the shell with the
discrete Stokes extension of ``X n``. The enumeration interleaves them:
position ``k`` (1-based) is a coupled mode when ``k`` is odd and a fluid
mode when ``k`` is even.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .errors import EigensolveFailure, IncompatibleFlux, InfSupDeficient, IOFailure
from .geometry import TransformFields, boundary_fields
from .mesh import Mesh, SaddleSolver
from .spectral import TWO_PI, SpectralField, uniform_grid

CACHE_MAGIC = b"SHFSIBAS"
CACHE_VERSION = 1


# ---------------------------------------------------------------------------
# shell modes


def shell_mode_index(j: int) -> tuple[str, int]:
    """Kind and wavenumber of the ``j``-th (1-based) real Fourier shell mode."""
    k = (j + 1) // 2
    return ("cos" if j % 2 == 1 else "sin"), k


def shell_mode(j: int, K: int) -> SpectralField:
    """``sqrt(2) cos(2 pi k y)`` or ``sqrt(2) sin(2 pi k y)``; orthonormal in L^2."""
    kind, k = shell_mode_index(j)
    return SpectralField.from_modes([(kind, k, np.sqrt(2.0))], K)


def w22_weights(k) -> np.ndarray:
    return (1.0 + (TWO_PI * np.asarray(k)) ** 2) ** 2


def w22_inner(u: SpectralField, v: SpectralField) -> float:
    """Spectral ``W^{2,2}`` inner product ``sum (1 + (2 pi k)^2)^2 u_k conj(v_k)``."""
    K = max(u.K, v.K)
    a, b = u.resized(K), v.resized(K)
    return float(np.sum(w22_weights(a.wavenumbers) * a.coeffs * np.conj(b.coeffs)).real)


# ---------------------------------------------------------------------------
# Stokes eigenmodes


def _probe_vectors(size: int, count: int) -> np.ndarray:
    rng = np.random.default_rng(20240101)
    return rng.standard_normal((size, count))


def _fix_gauge(Y, lam, rtol=1e-8):
    """Canonical rotation inside (numerically) degenerate eigenvalue groups."""
    Y = Y.copy()
    n = lam.size
    P = _probe_vectors(Y.shape[0], 8)
    i = 0
    while i < n:
        j = i + 1
        while j < n and abs(lam[j] - lam[i]) <= rtol * abs(lam[i]):
            j += 1
        block = Y[:, i:j]
        C = P[:, : min(j - i, P.shape[1])].T @ block
        Q, R = np.linalg.qr(C.T)
        Q = Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))
        Y[:, i:j] = block @ Q
        i = j
    return Y


def stokes_eigenbasis(mesh: Mesh, count: int, solver: SaddleSolver | None = None):
    """Smallest ``count`` Dirichlet Stokes eigenpairs.

    Returns ``(lam, X, q)`` with ``X`` of shape ``(count, 2 n2)``
    (velocity dofs, gradient Gram matrix equal to the identity) and ``q``
    of shape ``(count, n1)`` (zero-mean pressures).
    """
    if count <= 0:
        return np.zeros(0), np.zeros((0, 2 * mesh.n2)), np.zeros((0, mesh.n1))
    solver = solver or SaddleSolver(mesh)
    nu = solver.nu
    Kii = solver.K
    Mii = mesh.vector_mass[solver.dofs][:, solver.dofs]
    npress = solver.keep.size
    dim_free = nu - npress
    if count > dim_free:
        raise InfSupDeficient(f"requested {count} modes but divergence-free dimension is {dim_free}")
    Mbig = sp.block_diag([Mii, sp.csc_matrix((npress, npress))], format="csc")
    k = min(count + 4, dim_free - 1)
    from scipy.sparse.linalg import LinearOperator

    op = LinearOperator(solver.A.shape, matvec=solver.lu.solve, dtype=float)
    v0 = np.ones(solver.A.shape[0])
    v0[nu:] = 0.0
    try:
        vals, vecs = eigsh(solver.A, k=k, M=Mbig, sigma=0.0, which="LM", OPinv=op, v0=v0,
                           tol=1e-13, maxiter=5000)
    except ArpackNoConvergence as exc:
        raise EigensolveFailure(f"Stokes eigensolve did not converge: {exc}") from exc
    order = np.argsort(vals)
    vecs = vecs[:, order]
    U = vecs[:nu]
    # Rayleigh-Ritz in the computed (discretely solenoidal) subspace
    Kr = U.T @ (Kii @ U)
    Mr = U.T @ (Mii @ U)
    lam, C = _eigh_sym(Kr, Mr)
    if np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise EigensolveFailure("nonpositive Stokes eigenvalue")
    C = C / np.sqrt(lam)[None, :]  # gradient-orthonormal
    Y = U @ C
    Y = _fix_gauge(Y, lam)
    # recompute pressures consistently with the gauge: least squares on the momentum residual
    lam, Y = lam[:count], Y[:, :count]
    X = np.zeros((count, 2 * mesh.n2))
    X[:, solver.dofs] = Y.T
    q = _eigen_pressures(mesh, solver, X, lam)
    return lam, X, q


def _eigh_sym(A, B):
    from scipy.linalg import eigh

    A = 0.5 * (A + A.T)
    B = 0.5 * (B + B.T)
    return eigh(A, B)


def _eigen_pressures(mesh, solver, X, lam):
    """Pressure ``q`` with ``K X + D^T q = lam M X`` in the least-squares sense."""
    q = np.zeros((X.shape[0], mesh.n1))
    KX = mesh.vector_stiffness @ X.T
    MX = mesh.vector_mass @ X.T
    for i in range(X.shape[0]):
        r = (lam[i] * MX[:, i] - KX[:, i])[solver.dofs]
        _, p = solver.solve(r, np.zeros(solver.rows.size))
        q[i] = _zero_mean(mesh, p)
    return q


def _zero_mean(mesh, p):
    ones = np.ones(mesh.n1)
    area = ones @ (mesh.mass_p1 @ ones)
    return p - (ones @ (mesh.mass_p1 @ p)) / area


# ---------------------------------------------------------------------------
# shell lift


def normal_dirichlet_data(mesh: Mesh, values_at_nodes) -> np.ndarray:
    """Full-length dof vector equal to ``values * n(y)`` on boundary nodes, zero elsewhere."""
    y = mesh.boundary_node_y
    g = np.zeros(2 * mesh.n2)
    v = np.asarray(values_at_nodes, dtype=float)
    g[mesh.boundary_nodes] = v * np.cos(TWO_PI * y)
    g[mesh.n2 + mesh.boundary_nodes] = v * np.sin(TWO_PI * y)
    return g


def shell_lift(mesh: Mesh, X: SpectralField, solver: SaddleSolver | None = None, tol: float = 1e-10):
    """Discrete Stokes extension of the boundary datum ``X(y) n(y)``.

    Returns ``(velocity dofs, pressure)``.
    """
    if abs(X.mean()) > tol:
        raise IncompatibleFlux(f"shell datum has nonzero mean {X.mean():.3e}")
    solver = solver or SaddleSolver(mesh)
    g = normal_dirichlet_data(mesh, X.evaluate(mesh.boundary_node_y))
    f = -(mesh.vector_stiffness @ g)
    dg = -(mesh.divergence @ g)
    if abs(dg.sum()) > 1e-10 * max(1.0, np.abs(dg).max()):
        raise IncompatibleFlux(f"discrete boundary flux {dg.sum():.3e} is not zero")
    u, p = solver.solve(f, dg)
    u = u + g
    return u, _zero_mean(mesh, p)


# ---------------------------------------------------------------------------
# basis container


@dataclass
class GalerkinBasis:
    """Interleaved coupled/fluid Galerkin basis on a mesh.

    ``modes[k]`` (0-based) holds the velocity dofs of enumerated pair
    ``k + 1``; ``shell[k]`` its shell function coefficients (zero for fluid
    modes). ``lam`` are the Stokes eigenvalues, ``lift_energy`` the Dirichlet
    energies of the lifted modes.
    """

    mesh: Mesh
    n: int
    K: int
    lam: np.ndarray
    stokes: np.ndarray
    stokes_pressure: np.ndarray
    lifts: np.ndarray
    lift_pressure: np.ndarray

    @property
    def n_shell(self) -> int:
        return (self.n + 1) // 2

    @property
    def n_fluid(self) -> int:
        return self.n // 2

    @property
    def is_shell(self) -> np.ndarray:
        return np.arange(1, self.n + 1) % 2 == 1

    @property
    def modes(self) -> np.ndarray:
        out = np.empty((self.n, 2 * self.mesh.n2))
        out[0::2] = self.lifts[: self.n_shell]
        out[1::2] = self.stokes[: self.n_fluid]
        return out

    def shell_function(self, k: int) -> SpectralField:
        """Shell component of enumerated pair ``k`` (1-based)."""
        if k % 2 == 0:
            return SpectralField.zeros(self.K)
        return shell_mode((k + 1) // 2, self.K)

    @property
    def shell_coeffs(self) -> np.ndarray:
        """Complex Fourier coefficients of the shell components, shape ``(n, 2K+1)``."""
        return np.array([self.shell_function(k).coeffs for k in range(1, self.n + 1)])

    def shell_samples(self, m: int, deriv: int = 0) -> np.ndarray:
        """Shell components sampled on the ``m``-point grid, shape ``(n, m)``."""
        y = uniform_grid(m)
        out = np.zeros((self.n, m))
        for k in range(1, self.n + 1, 2):
            kind, w = shell_mode_index((k + 1) // 2)
            arg = TWO_PI * w * y
            s2 = np.sqrt(2.0) * (TWO_PI * w) ** deriv
            if kind == "cos":
                out[k - 1] = s2 * np.cos(arg + deriv * np.pi / 2)
            else:
                out[k - 1] = s2 * np.sin(arg + deriv * np.pi / 2)
        return out

    @property
    def lift_energy(self) -> np.ndarray:
        Kv = self.mesh.vector_stiffness
        return np.einsum("ki,ki->k", self.lifts, (Kv @ self.lifts.T).T)

    def gradient_gram(self) -> np.ndarray:
        S = self.stokes
        return S @ (self.mesh.vector_stiffness @ S.T)

    def mass_gram(self) -> np.ndarray:
        S = self.stokes
        return S @ (self.mesh.vector_mass @ S.T)

    def truncate(self, n: int) -> "GalerkinBasis":
        if n > self.n:
            raise ValueError("cannot enlarge a basis by truncation")
        ns, nf = (n + 1) // 2, n // 2
        return GalerkinBasis(self.mesh, n, self.K, self.lam[:nf], self.stokes[:nf],
                             self.stokes_pressure[:nf], self.lifts[:ns], self.lift_pressure[:ns])

    # cache ------------------------------------------------------------

    def save(self, path):
        """Binary cache: magic, version, mesh hash, counts, little-endian float64 arrays."""
        m = self.mesh
        try:
            with open(path, "wb") as fh:
                fh.write(CACHE_MAGIC)
                fh.write(struct.pack("<I", CACHE_VERSION))
                fh.write(bytes.fromhex(m.hash))
                fh.write(struct.pack("<6q", self.n, self.K, self.n_fluid, self.n_shell, m.n1, m.n2))
                for arr in (self.lam, self.stokes, self.stokes_pressure, self.lifts, self.lift_pressure):
                    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        except OSError as exc:
            raise IOFailure(f"cannot write basis cache {path}: {exc}") from exc

    @classmethod
    def load(cls, path, mesh: Mesh) -> "GalerkinBasis":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise IOFailure(f"cannot read basis cache {path}: {exc}") from exc
        if data[:8] != CACHE_MAGIC:
            raise IOFailure(f"{path} is not a basis cache")
        (version,) = struct.unpack("<I", data[8:12])
        if version != CACHE_VERSION:
            raise IOFailure(f"unsupported basis cache version {version}")
        if data[12:44].hex() != mesh.hash:
            raise IOFailure("basis cache was built for a different mesh")
        n, K, nf, ns, n1, n2 = struct.unpack("<6q", data[44:92])
        if (n1, n2) != (mesh.n1, mesh.n2):
            raise IOFailure("basis cache size mismatch")
        off = 92
        shapes = [(nf,), (nf, 2 * n2), (nf, n1), (ns, 2 * n2), (ns, n1)]
        arrs = []
        for shp in shapes:
            cnt = int(np.prod(shp))
            arrs.append(np.frombuffer(data, dtype="<f8", count=cnt, offset=off).reshape(shp).copy())
            off += 8 * cnt
        if off != len(data):
            raise IOFailure("basis cache has trailing or missing bytes")
        return cls(mesh, n, K, *arrs)


def build_basis(mesh: Mesh, n: int, K: int = 32) -> GalerkinBasis:
    """Assemble the first ``n`` enumerated Galerkin pairs."""
    if n < 1:
        raise ValueError("need at least one basis pair")
    ns, nf = (n + 1) // 2, n // 2
    kmax = (ns + 1) // 2
    if kmax > K or (mesh.segments and 2 * kmax >= mesh.segments):
        raise ValueError("shell modes exceed the spectral or boundary resolution")
    solver = SaddleSolver(mesh)
    lam, X, q = stokes_eigenbasis(mesh, nf, solver)
    lifts = np.zeros((ns, 2 * mesh.n2))
    lp = np.zeros((ns, mesh.n1))
    for j in range(1, ns + 1):
        lifts[j - 1], lp[j - 1] = shell_lift(mesh, shell_mode(j, K), solver)
    return GalerkinBasis(mesh, n, K, lam, X, q, lifts, lp)


# ---------------------------------------------------------------------------
# projections


def shell_jacobian(domain, zeta: SpectralField, m: int) -> np.ndarray:
    """Boundary determinant ``J_zeta o phi`` on the ``m``-point grid."""
    return boundary_fields(domain, zeta, uniform_grid(m)).J


def project_shell(basis: GalerkinBasis, J_boundary, fn, n: int | None = None) -> SpectralField:
    """Geometry-weighted shell projection ``J^{-1} sum_k <J f, X_k> X_k``.

    ``J_boundary`` holds boundary determinant samples on a uniform grid of
    odd size ``m``; ``fn`` is a spectral field or samples on the same grid.
    The ``W^{2,2}`` coefficients are normalised by ``<X_k, X_k>``, so the
    sum reproduces every basis member.
    """
    J = np.asarray(J_boundary, dtype=float)
    m = J.size
    n = basis.n if n is None else n
    f = fn.to_samples(m) if isinstance(fn, SpectralField) else np.asarray(fn, dtype=float)
    X = basis.shell_samples(m)[:n][basis.is_shell[:n]]
    g = J * f
    # W22-orthogonal Fourier modes: coefficient ratio reduces to the L^2 one
    coef = X @ g / m / (np.sum(X * X, axis=1) / m)
    out = (coef @ X) / J
    return SpectralField.from_samples(out, (m - 1) // 2)


def shell_coefficients(basis: GalerkinBasis, J_boundary, fn, n: int | None = None) -> np.ndarray:
    """Coefficients of :func:`project_shell` on the shell modes among the first ``n`` pairs."""
    J = np.asarray(J_boundary, dtype=float)
    m = J.size
    n = basis.n if n is None else n
    f = fn.to_samples(m) if isinstance(fn, SpectralField) else np.asarray(fn, dtype=float)
    X = basis.shell_samples(m)[:n]
    norms = np.sum(X * X, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(norms > 0, X @ (J * f) / np.where(norms > 0, norms, 1.0), 0.0)
    return c


@dataclass(frozen=True)
class QuadField:
    """Vector field sampled at mesh quadrature points, with its boundary trace.

    ``trace`` holds values at ``y_j = j / m`` on the reference boundary.
    """

    values: np.ndarray
    grads: np.ndarray
    trace: np.ndarray

    @classmethod
    def from_dofs(cls, mesh: Mesh, dofs, m: int) -> "QuadField":
        from .mesh import boundary_evaluator

        v, g = mesh.eval_vector(dofs)
        E, _, _ = boundary_evaluator(mesh, uniform_grid(m))
        d = np.asarray(dofs).reshape(2, mesh.n2)
        tr = np.stack([E @ d[0], E @ d[1]], axis=1)
        return cls(v, g, tr)


def project_fluid(basis: GalerkinBasis, tf: TransformFields, tf_boundary: TransformFields,
                  Phi: QuadField, n: int | None = None):
    """Geometry-weighted fluid projection.

    Coupled-mode coefficients come from the shell projection of the normal
    trace of ``Phi``; fluid-mode coefficients are gradient inner products of
    the Stokes modes with ``B^T Phi``. ``tf`` lives at the mesh quadrature
    points, ``tf_boundary`` on the boundary grid of ``Phi.trace``.

    Returns ``(coefficients, projected QuadField)``.
    """
    mesh = basis.mesh
    n = basis.n if n is None else n
    m = Phi.trace.shape[0]
    y = uniform_grid(m)
    normal = np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=1)
    phi_n = np.sum(Phi.trace * normal, axis=1)
    coef = shell_coefficients(basis, tf_boundary.J, phi_n, n)
    U, gU = tf.pull(Phi.values, Phi.grads)
    Xs = basis.modes[:n]
    _, gX = mesh.eval_vector_many(Xs)
    even = ~basis.is_shell[:n]
    inner = np.einsum("p,kpij,pij->k", mesh.weights, gX, gU)
    coef = np.where(even, inner, coef)
    return coef, reconstruct(basis, tf, tf_boundary, coef)


def reconstruct(basis: GalerkinBasis, tf: TransformFields, tf_boundary: TransformFields, coef) -> QuadField:
    """``B^{-T} sum_k c_k X_k`` at quadrature points and on the boundary grid."""
    mesh = basis.mesh
    n = len(coef)
    U = np.asarray(coef) @ basis.modes[:n]
    u, gu = mesh.eval_vector(U)
    v, gv = tf.piola(u, gu)
    m = tf_boundary.J.size
    y = uniform_grid(m)
    normal = np.stack([np.cos(TWO_PI * y), np.sin(TWO_PI * y)], axis=1)
    Xs = basis.shell_samples(m)[:n]
    ub = (np.asarray(coef) @ Xs)[:, None] * normal
    vb = tf_boundary.piola(ub)
    return QuadField(v, gv, vb)
