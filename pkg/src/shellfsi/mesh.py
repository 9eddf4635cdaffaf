"""Ring triangulation of the unit disk and Taylor-Hood (P2/P1) operators.

All bilinear forms are assembled through quadrature-point evaluation
matrices: ``E2`` maps P2 nodal values to values at quadrature points,
``Gx``/``Gy`` to their gradients, ``E1`` does the same for P1 pressure.
Integrals are then weighted sums with ``weights``. Vector fields are stored
component-major, dof ``c * n2 + node``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import IOFailure
from .spectral import SpectralField

# six-point degree-4 rule (Dunavant), barycentric points and weights summing to 1
_A1, _B1, _W1 = 0.445948490915965, 0.108103018168070, 0.223381589678011
_A2, _B2, _W2 = 0.091576213509771, 0.816847572980459, 0.109951743655322
QUAD_BARY = np.array([
    [_A1, _A1, _B1], [_A1, _B1, _A1], [_B1, _A1, _A1],
    [_A2, _A2, _B2], [_A2, _B2, _A2], [_B2, _A2, _A2],
])
QUAD_WEIGHTS = np.array([_W1] * 3 + [_W2] * 3)
QUAD_DEGREE = 4

LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


def _p2_shape(lam):
    """P2 basis values and barycentric derivatives at points ``lam`` (Q, 3)."""
    l0, l1, l2 = lam.T
    vals = np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ], axis=1)
    # d/d lambda_m of each basis function: shape (Q, 6, 3)
    Q = lam.shape[0]
    d = np.zeros((Q, 6, 3))
    for i in range(3):
        d[:, i, i] = 4 * lam[:, i] - 1
    for e, (i, j) in enumerate(LOCAL_EDGES):
        d[:, 3 + e, i] = 4 * lam[:, j]
        d[:, 3 + e, j] = 4 * lam[:, i]
    return vals, d


@dataclass(frozen=True)
class FEField:
    """Nodal values of a P1 or P2 field; vector fields have shape ``(N, 2)``."""

    values: np.ndarray
    degree: int = 2

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2

    def flat(self) -> np.ndarray:
        """Component-major dof vector."""
        return self.values.T.ravel() if self.is_vector else self.values

    @classmethod
    def from_flat(cls, dofs, degree: int = 2) -> "FEField":
        dofs = np.asarray(dofs, dtype=float)
        return cls(dofs.reshape(2, -1).T.copy(), degree)


class Mesh:
    """Conforming triangulation of the unit disk with Taylor-Hood operators."""

    def __init__(self, vertices, triangles, boundary_vertices, boundary_y, rings=None, segments=None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.boundary_vertices = np.asarray(boundary_vertices, dtype=np.int64)
        self.boundary_y = np.asarray(boundary_y, dtype=float)
        self.rings, self.segments = rings, segments
        self._build_edges()
        self._build_quadrature()

    # topology ---------------------------------------------------------

    def _build_edges(self):
        tri = self.triangles
        pairs = np.stack([tri[:, [i, j]] for i, j in LOCAL_EDGES], axis=1)  # (T, 3, 2)
        key = np.sort(pairs, axis=2).reshape(-1, 2)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        self.edges = edges
        self.tri_edges = inv.reshape(-1, 3)
        nv = self.vertices.shape[0]
        mid = 0.5 * (self.vertices[edges[:, 0]] + self.vertices[edges[:, 1]])
        self.nodes = np.vstack([self.vertices, mid])
        self.tri_p2 = np.hstack([tri, nv + self.tri_edges])

        # ordered boundary P2 nodes: vertex j, then midpoint of edge (j, j+1)
        bv = self.boundary_vertices
        S = bv.size
        lookup = {tuple(e): k for k, e in enumerate(edges)}
        bnodes = np.empty(2 * S, dtype=np.int64)
        for j in range(S):
            a, b = bv[j], bv[(j + 1) % S]
            bnodes[2 * j] = a
            bnodes[2 * j + 1] = nv + lookup[(min(a, b), max(a, b))]
        self.boundary_nodes = bnodes
        dy = np.diff(np.append(self.boundary_y, self.boundary_y[0] + 1.0))
        by = np.empty(2 * S)
        by[0::2] = self.boundary_y
        by[1::2] = self.boundary_y + 0.5 * dy
        self.boundary_node_y = by % 1.0
        interior = np.ones(self.n2, dtype=bool)
        interior[bnodes] = False
        self.interior_nodes = np.flatnonzero(interior)

    @property
    def n1(self) -> int:
        return self.vertices.shape[0]

    @property
    def n2(self) -> int:
        return self.nodes.shape[0]

    @property
    def areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    @cached_property
    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.triangles, dtype="<i8").tobytes())
        return h.hexdigest()

    @property
    def h(self) -> float:
        v = self.vertices[self.edges]
        return float(np.max(np.linalg.norm(v[:, 1] - v[:, 0], axis=1)))

    # quadrature -------------------------------------------------------

    def _build_quadrature(self):
        T = self.triangles.shape[0]
        Q = QUAD_WEIGHTS.size
        v = self.vertices[self.triangles]  # (T, 3, 2)
        area = self.areas
        self.quad_points = np.einsum("qa,tad->tqd", QUAD_BARY, v).reshape(-1, 2)
        self.weights = (area[:, None] * QUAD_WEIGHTS[None, :]).ravel()
        self.quad_tri = np.repeat(np.arange(T), Q)

        # gradients of barycentric coordinates per triangle: (T, 3, 2)
        x, y = v[..., 0], v[..., 1]
        glam = np.stack([
            np.stack([y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]], axis=1),
            np.stack([y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]], axis=1),
            np.stack([y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]], axis=1),
        ], axis=1) / (2 * area)[:, None, None]
        self._glam = glam

        vals, dl = _p2_shape(QUAD_BARY)
        grad = np.einsum("qim,tmd->tqid", dl, glam)  # (T, Q, 6, 2)
        rows = np.repeat(np.arange(T * Q), 6)
        cols = np.repeat(self.tri_p2, Q, axis=0).ravel()
        shape = (T * Q, self.n2)
        self.E2 = sp.csr_matrix((np.tile(vals, (T, 1)).ravel(), (rows, cols)), shape=shape)
        self.Gx = sp.csr_matrix((grad[..., 0].ravel(), (rows, cols)), shape=shape)
        self.Gy = sp.csr_matrix((grad[..., 1].ravel(), (rows, cols)), shape=shape)

        rows1 = np.repeat(np.arange(T * Q), 3)
        cols1 = np.repeat(self.triangles, Q, axis=0).ravel()
        shape1 = (T * Q, self.n1)
        self.E1 = sp.csr_matrix((np.tile(QUAD_BARY, (T, 1)).ravel(), (rows1, cols1)), shape=shape1)
        g1 = np.repeat(glam, Q, axis=0)  # (T*Q, 3, 2)
        self.G1x = sp.csr_matrix((g1[..., 0].ravel(), (rows1, cols1)), shape=shape1)
        self.G1y = sp.csr_matrix((g1[..., 1].ravel(), (rows1, cols1)), shape=shape1)

    @property
    def n_quad(self) -> int:
        return self.weights.size

    def integrate(self, values) -> float:
        """Integrate a quadrature-point field (leading axis = points)."""
        return np.tensordot(self.weights, values, axes=(0, 0))

    # evaluation at quadrature points ----------------------------------

    def eval_vector(self, dofs):
        """Values ``(P, 2)`` and gradients ``(P, 2, 2)`` (``[p, i, j] = d_j u_i``)."""
        d = np.asarray(dofs).reshape(2, self.n2)
        vals = np.stack([self.E2 @ d[0], self.E2 @ d[1]], axis=1)
        grad = np.stack([
            np.stack([self.Gx @ d[0], self.Gy @ d[0]], axis=1),
            np.stack([self.Gx @ d[1], self.Gy @ d[1]], axis=1),
        ], axis=1)
        return vals, grad

    def eval_vector_many(self, dofs):
        """Batched :meth:`eval_vector` for dofs of shape ``(n, 2 * n2)``."""
        d = np.asarray(dofs).reshape(-1, 2, self.n2)
        n = d.shape[0]
        flat = d.reshape(n * 2, self.n2).T  # (n2, 2n)
        v = (self.E2 @ flat).T.reshape(n, 2, -1)
        gx = (self.Gx @ flat).T.reshape(n, 2, -1)
        gy = (self.Gy @ flat).T.reshape(n, 2, -1)
        vals = np.transpose(v, (0, 2, 1))
        grad = np.stack([gx, gy], axis=-1)  # (n, 2, P, 2)
        return vals, np.transpose(grad, (0, 2, 1, 3))

    def eval_scalar(self, dofs, degree: int = 1):
        E = self.E1 if degree == 1 else self.E2
        return E @ np.asarray(dofs)

    # assembled operators ----------------------------------------------

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        """Scalar P2 Laplacian ``int grad u . grad v``."""
        W = sp.diags(self.weights)
        return (self.Gx.T @ W @ self.Gx + self.Gy.T @ W @ self.Gy).tocsr()

    @cached_property
    def mass(self) -> sp.csr_matrix:
        W = sp.diags(self.weights)
        return (self.E2.T @ W @ self.E2).tocsr()

    @cached_property
    def mass_p1(self) -> sp.csr_matrix:
        W = sp.diags(self.weights)
        return (self.E1.T @ W @ self.E1).tocsr()

    @cached_property
    def vector_stiffness(self) -> sp.csr_matrix:
        return sp.block_diag([self.stiffness, self.stiffness]).tocsr()

    @cached_property
    def vector_mass(self) -> sp.csr_matrix:
        return sp.block_diag([self.mass, self.mass]).tocsr()

    @cached_property
    def divergence(self) -> sp.csr_matrix:
        """``D[q, u] = int q div u`` with P1 ``q`` and vector P2 ``u``."""
        W = sp.diags(self.weights)
        return sp.hstack([self.E1.T @ W @ self.Gx, self.E1.T @ W @ self.Gy]).tocsr()

    @cached_property
    def interior_dofs(self) -> np.ndarray:
        return np.concatenate([self.interior_nodes, self.n2 + self.interior_nodes])

    @cached_property
    def boundary_dofs(self) -> np.ndarray:
        return np.concatenate([self.boundary_nodes, self.n2 + self.boundary_nodes])

    def divergence_l2(self, dofs) -> float:
        """``|| div u ||_{L^2}`` evaluated by quadrature."""
        _, g = self.eval_vector(dofs)
        return float(np.sqrt(self.integrate((g[:, 0, 0] + g[:, 1, 1]) ** 2)))

    def interpolate_vector(self, fn) -> np.ndarray:
        """Nodal P2 interpolant of ``fn(x) -> (N, 2)`` as a flat dof vector."""
        v = np.asarray(fn(self.nodes), dtype=float)
        return v.T.ravel()

    # export -----------------------------------------------------------

    def to_text(self) -> str:
        lines = [str(self.n1)]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines.append(str(self.triangles.shape[0]))
        lines += [f"{i} {j} {k}" for i, j, k in self.triangles]
        lines.append(str(self.boundary_vertices.size))
        lines += [f"{v} {y:.17g}" for v, y in zip(self.boundary_vertices, self.boundary_y)]
        return "\n".join(lines) + "\n"

    def write(self, path):
        try:
            with open(path, "w", encoding="ascii") as fh:
                fh.write(self.to_text())
        except OSError as exc:
            raise IOFailure(f"cannot write mesh to {path}: {exc}") from exc

    @classmethod
    def from_text(cls, text: str) -> "Mesh":
        it = iter(text.split("\n"))
        nv = int(next(it))
        verts = np.array([[float(t) for t in next(it).split()] for _ in range(nv)])
        nt = int(next(it))
        tris = np.array([[int(t) for t in next(it).split()] for _ in range(nt)])
        nb = int(next(it))
        bmap = [next(it).split() for _ in range(nb)]
        return cls(verts, tris, [int(b[0]) for b in bmap], [float(b[1]) for b in bmap])

    @classmethod
    def read(cls, path) -> "Mesh":
        try:
            with open(path, encoding="ascii") as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise IOFailure(f"cannot read mesh from {path}: {exc}") from exc


def build_onion_mesh(rings: int, segments: int) -> Mesh:
    """Concentric-ring triangulation of the unit disk.

    Ring ``i`` (radius ``i / rings``) carries ``segments`` vertices; odd rings
    counted from the boundary are rotated by half a step so neighbouring
    strips zig-zag. The boundary ring starts at angle 0, so boundary vertex
    ``j`` sits at ``y = j / segments``.
    """
    if rings < 2 or segments < 8:
        raise ValueError("need rings >= 2 and segments >= 8")
    R, S = rings, segments
    verts = [np.zeros(2)]
    offset = {}
    for i in range(1, R + 1):
        offset[i] = 0.5 * ((R - i) % 2)
        th = 2 * np.pi * (np.arange(S) + offset[i]) / S
        verts.append(np.stack([i / R * np.cos(th), i / R * np.sin(th)], axis=1))
    verts = np.vstack(verts)

    def ring(i, j):
        return 1 + (i - 1) * S + (j % S)

    tris = [(0, ring(1, j), ring(1, j + 1)) for j in range(S)]
    for i in range(1, R):
        # outer vertex index aligned half a step ahead of inner vertex j
        shift = 0 if offset[i + 1] > offset[i] else 1
        for j in range(S):
            a0, a1 = ring(i, j), ring(i, j + 1)
            b0, b1 = ring(i + 1, j + shift), ring(i + 1, j + shift + 1)
            tris.append((a0, b0, a1))
            tris.append((a1, b0, b1))
    tris = np.array(tris, dtype=np.int64)
    # enforce counter-clockwise orientation
    v = verts[tris]
    e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
    neg = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
    tris[neg] = tris[neg][:, [0, 2, 1]]
    bverts = np.array([ring(R, j) for j in range(S)])
    return Mesh(verts, tris, bverts, np.arange(S) / S, rings=R, segments=S)


def trace_restrict(mesh: Mesh, v: FEField, K: int | None = None, nodes: str = "vertices"):
    """Boundary trace of a vector field as two spectral fields on the circle.

    ``nodes="vertices"`` samples at boundary vertices (which lie on the
    curve); ``"all"`` also uses the P2 edge-midpoint nodes.
    """
    if nodes == "vertices":
        idx = mesh.boundary_vertices
    else:
        idx = mesh.boundary_nodes
    vals = v.values[idx]
    if K is None:
        K = (idx.size - 1) // 2
    return (SpectralField.from_samples(vals[:, 0], K), SpectralField.from_samples(vals[:, 1], K))


def boundary_evaluator(mesh: Mesh, y):
    """Sparse maps from P2 dofs to values and gradients at boundary points.

    Boundary point ``y`` lies on the polygon edge between boundary vertices
    ``floor(y S)`` and the next one, at the matching fraction of the edge.
    Returns ``E, Gx, Gy`` of shape ``(len(y), n2)``.
    """
    y = np.asarray(y, dtype=float) % 1.0
    bv = mesh.boundary_vertices
    S = bv.size
    by = np.append(mesh.boundary_y, 1.0)
    j = np.clip(np.searchsorted(by, y, side="right") - 1, 0, S - 1)
    t = (y - by[j]) / (by[j + 1] - by[j])
    owner = _boundary_triangles(mesh)
    rows, cols, ev, gx, gy = [], [], [], [], []
    for p, (jj, tt) in enumerate(zip(j, t)):
        tri = owner[jj]
        a, b = bv[jj], bv[(jj + 1) % S]
        lam = np.zeros(3)
        verts = list(mesh.triangles[tri])
        lam[verts.index(a)] = 1 - tt
        lam[verts.index(b)] = tt
        vals, dl = _p2_shape(lam[None, :])
        grad = dl[0] @ mesh._glam[tri]
        rows += [p] * 6
        cols += list(mesh.tri_p2[tri])
        ev += list(vals[0])
        gx += list(grad[:, 0])
        gy += list(grad[:, 1])
    shape = (y.size, mesh.n2)
    mk = lambda d: sp.csr_matrix((d, (rows, cols)), shape=shape)  # noqa: E731
    return mk(ev), mk(gx), mk(gy)


def _boundary_triangles(mesh: Mesh):
    """Triangle owning each boundary edge ``(b_j, b_{j+1})``."""
    cache = getattr(mesh, "_btri", None)
    if cache is not None:
        return cache
    bv = mesh.boundary_vertices
    S = bv.size
    lookup = {tuple(e): k for k, e in enumerate(mesh.edges)}
    edge_tri = {}
    for t, es in enumerate(mesh.tri_edges):
        for e in es:
            edge_tri[e] = t
    out = np.empty(S, dtype=np.int64)
    for jj in range(S):
        a, b = bv[jj], bv[(jj + 1) % S]
        out[jj] = edge_tri[lookup[(min(a, b), max(a, b))]]
    mesh._btri = out
    return out


class SaddleSolver:
    """Factorised Stokes-type saddle system on a subset of velocity nodes.

    Solves ``K u + D^T p = f, D u = g`` for velocity dofs on ``nodes``
    (default: all interior nodes) and multipliers on P1 ``rows`` (default:
    all vertices). One multiplier is pinned to remove the constant mode, so
    ``g`` must sum to zero over ``rows``.
    """

    def __init__(self, mesh: Mesh, nodes=None, rows=None, divergence=None):
        from scipy.sparse.linalg import splu

        from .errors import InfSupDeficient

        self.mesh = mesh
        nodes = mesh.interior_nodes if nodes is None else np.asarray(nodes)
        self.dofs = np.concatenate([nodes, mesh.n2 + nodes])
        D = mesh.divergence if divergence is None else divergence
        Dr = D[:, self.dofs]
        if rows is None:
            rows = np.flatnonzero(np.abs(Dr).sum(axis=1).A1 > 0)
        self.rows = np.asarray(rows)
        self.keep = self.rows[1:]
        K = mesh.vector_stiffness[self.dofs][:, self.dofs]
        Dk = Dr[self.keep]
        self.K, self.D = K, Dr[self.rows]
        A = sp.bmat([[K, Dk.T], [Dk, None]], format="csc")
        self.nu = self.dofs.size
        try:
            self.lu = splu(A)
        except RuntimeError as exc:
            raise InfSupDeficient(f"saddle system is singular: {exc}") from exc
        self.A = A

    def solve(self, f, g):
        """Return full-length velocity dofs and full-length multiplier vector."""
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        if f.size == 2 * self.mesh.n2:
            f = f[self.dofs]
        if g.size == self.mesh.n1:
            g = g[self.rows]
        rhs = np.concatenate([f, g[1:]])
        x = self.lu.solve(rhs)
        u = np.zeros(2 * self.mesh.n2)
        u[self.dofs] = x[: self.nu]
        p = np.zeros(self.mesh.n1)
        p[self.keep] = x[self.nu:]
        return u, p
