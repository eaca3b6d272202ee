"""Discrete trial/test spaces, interpolation, projection and L2 errors.

Trial space (lowest order)::

    u in P0(T), sigma in [P0(T)]^2, u_hat in S1(S), sigma_hat in P0(S)

Global dof ordering: ``u`` (one per triangle), ``sigma_x``, ``sigma_y``,
``u_hat`` (one per vertex), ``sigma_hat`` (one per edge, w.r.t. the global edge
normal).  The enriched test space is P2(T) x [P2(T)]^2, discontinuous, with
the barycentric-monomial basis ``l0, l1, l2, l0 l1, l1 l2, l2 l0`` per element.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .mesh import BoundaryMesh
from .quadrature import collapsed_triangle, gauss_segment

N_TEST_LOCAL = 18
N_TRIAL_LOCAL = 9


@dataclass(frozen=True)
class DofLayout:
    """Index maps of the trial space on a triangulation."""

    n_triangles: int
    n_vertices: int
    n_edges: int
    boundary_vertices: np.ndarray  # global vertex ids, boundary-loop order
    boundary_edges: np.ndarray  # global edge ids, boundary-loop order

    @classmethod
    def from_mesh(cls, mesh):
        loop = mesh.boundary_loop()
        return cls(mesh.n_triangles, mesh.n_vertices, mesh.n_edges,
                   mesh.edges[loop, 0].copy(), loop.copy())

    @property
    def u(self):
        return slice(0, self.n_triangles)

    @property
    def sigma_x(self):
        return slice(self.n_triangles, 2 * self.n_triangles)

    @property
    def sigma_y(self):
        return slice(2 * self.n_triangles, 3 * self.n_triangles)

    @property
    def u_hat(self):
        o = 3 * self.n_triangles
        return slice(o, o + self.n_vertices)

    @property
    def sigma_hat(self):
        o = 3 * self.n_triangles + self.n_vertices
        return slice(o, o + self.n_edges)

    @property
    def ndof(self):
        return 3 * self.n_triangles + self.n_vertices + self.n_edges

    @property
    def boundary_u_hat_dofs(self):
        return self.u_hat.start + self.boundary_vertices

    @property
    def boundary_sigma_hat_dofs(self):
        return self.sigma_hat.start + self.boundary_edges

    @property
    def boundary_dofs(self):
        """Trial dofs with a trace on the boundary: S1 nodes first, then P0 edges."""
        return np.concatenate([self.boundary_u_hat_dofs, self.boundary_sigma_hat_dofs])

    def restrict_dirichlet(self):
        """0/1 matrix (nB x ndof) realising u_hat|Gamma on boundary S1 nodes."""
        return _selection(self.boundary_u_hat_dofs, self.ndof)

    def restrict_neumann(self):
        """0/1 matrix (nB x ndof) realising sigma_hat|Gamma on boundary edges.

        Boundary edges carry the outward normal as global orientation, so no
        sign flips are needed.
        """
        return _selection(self.boundary_sigma_hat_dofs, self.ndof)

    def local_dofs(self, mesh):
        """(nT, 9) global indices: u, sigma_x, sigma_y, 3 vertices, 3 edges."""
        t = np.arange(self.n_triangles)
        return np.column_stack([
            t, self.n_triangles + t, 2 * self.n_triangles + t,
            self.u_hat.start + mesh.triangles,
            self.sigma_hat.start + mesh.tri_edges,
        ])

    def split(self, x):
        """Views (u, sigma (nT,2), u_hat, sigma_hat) of a trial vector."""
        x = np.asarray(x)
        return (x[self.u], np.column_stack([x[self.sigma_x], x[self.sigma_y]]),
                x[self.u_hat], x[self.sigma_hat])


def _selection(cols, n):
    m = len(cols)
    return sp.csr_matrix((np.ones(m), (np.arange(m), cols)), shape=(m, n))


@dataclass(frozen=True)
class EnrichedTestLayout:
    """Broken P2 x [P2]^2 test space: 18 local dofs per element."""

    n_triangles: int

    @property
    def dim(self):
        return N_TEST_LOCAL * self.n_triangles

    def global_index(self, t, i):
        return N_TEST_LOCAL * np.asarray(t) + i


# ----------------------------------------------------------------------
# local P2 basis

def p2_values(bary):
    """Basis values at barycentric points, shape (..., 6)."""
    l0, l1, l2 = bary[..., 0], bary[..., 1], bary[..., 2]
    return np.stack([l0, l1, l2, l0 * l1, l1 * l2, l2 * l0], axis=-1)


def p2_gradients(bary, grad_bary):
    """Physical basis gradients.

    Parameters
    ----------
    bary : (nq, 3) barycentric points.
    grad_bary : (nT, 3, 2) gradients of the barycentric coordinates.

    Returns
    -------
    (nT, nq, 6, 2) ndarray
    """
    g0, g1, g2 = (grad_bary[:, None, k, :] for k in range(3))
    l0, l1, l2 = (bary[None, :, k, None] for k in range(3))
    nT, nq = grad_bary.shape[0], bary.shape[0]
    shape = (nT, nq, 2)
    return np.stack([
        np.broadcast_to(g0, shape), np.broadcast_to(g1, shape), np.broadcast_to(g2, shape),
        l0 * g1 + l1 * g0, l1 * g2 + l2 * g1, l2 * g0 + l0 * g2,
    ], axis=2)


def barycentric_gradients(mesh):
    """(nT, 3, 2) gradients of the barycentric coordinates."""
    p = mesh.vertices[mesh.triangles]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
    Jinv = np.linalg.inv(J)
    g1, g2 = Jinv[:, 0, :], Jinv[:, 1, :]
    return np.stack([-g1 - g2, g1, g2], axis=1)


def element_points(mesh, bary):
    """Physical coordinates (nT, nq, 2) of barycentric points."""
    p = mesh.vertices[mesh.triangles]
    return np.einsum("qk,tkd->tqd", bary, p)


# ----------------------------------------------------------------------
# boundary data

def boundary_quadrature(boundary, n=7):
    """Gauss points (nS, n, 2), weights (nS, n) incl. length, local parameter t."""
    t, w = gauss_segment(n)
    pts = boundary.start[:, None, :] + t[None, :, None] * (boundary.end - boundary.start)[:, None, :]
    return pts, w[None, :] * boundary.lengths[:, None], t


def boundary_mass_s1(boundary):
    """S1 x S1 mass matrix on the closed boundary (dense)."""
    n, L = boundary.n, boundary.lengths
    M = np.zeros((n, n))
    i = np.arange(n)
    j = (i + 1) % n
    np.add.at(M, (i, i), L / 3)
    np.add.at(M, (j, j), L / 3)
    np.add.at(M, (i, j), L / 6)
    np.add.at(M, (j, i), L / 6)
    return M


def boundary_mass_s1p0(boundary):
    """M[a, k] = <eta_a, chi_k>: S1 rows, P0 columns."""
    n, L = boundary.n, boundary.lengths
    M = np.zeros((n, n))
    k = np.arange(n)
    M[k, k] += L / 2
    M[(k + 1) % n, k] += L / 2
    return M


def project_boundary_data(boundary, g, target):
    """L2(Gamma) projection of ``g`` onto S1 (``"S1"``) or P0 (``"P0"``).

    ``g`` is called as ``g(points, normals)`` with arrays of shape (m, 2).
    """
    pts, w, t = boundary_quadrature(boundary, 7)
    nS, nq = w.shape
    normals = np.repeat(boundary.normals, nq, axis=0)
    vals = np.asarray(g(pts.reshape(-1, 2), normals), float).reshape(nS, nq)
    if target == "P0":
        return (vals * w).sum(axis=1) / boundary.lengths
    if target != "S1":
        raise ValueError(f"unknown target space {target!r}")
    rhs = np.zeros(nS)
    np.add.at(rhs, np.arange(nS), (vals * w * (1 - t)).sum(axis=1))
    np.add.at(rhs, (np.arange(nS) + 1) % nS, (vals * w * t).sum(axis=1))
    try:
        c = sla.cho_factor(boundary_mass_s1(boundary))
    except np.linalg.LinAlgError as exc:  # SPD by construction
        raise RuntimeError("boundary mass matrix factorisation failed") from exc
    return sla.cho_solve(c, rhs)


# ----------------------------------------------------------------------
# trial interpolation and errors

def interpolate_trial(mesh, layout, u=None, sigma=None, u_hat=None, sigma_hat=None):
    """Trial coefficient vector from callables.

    ``u(p)`` and ``u_hat(p)`` take (m, 2) points; ``sigma(p)`` and
    ``sigma_hat(p)`` return (m, 2) vectors.  P0 blocks use centroid values,
    ``u_hat`` vertex values, ``sigma_hat`` the normal component at edge
    midpoints.  ``u_hat`` defaults to ``u`` and ``sigma_hat`` to ``sigma``.
    """
    x = np.zeros(layout.ndof)
    c = mesh.centroids
    if u is not None:
        x[layout.u] = u(c)
    if sigma is not None:
        s = np.asarray(sigma(c))
        x[layout.sigma_x], x[layout.sigma_y] = s[:, 0], s[:, 1]
    u_hat = u if u_hat is None else u_hat
    sigma_hat = sigma if sigma_hat is None else sigma_hat
    if u_hat is not None:
        x[layout.u_hat] = u_hat(mesh.vertices)
    if sigma_hat is not None:
        s = np.asarray(sigma_hat(mesh.edge_midpoints))
        x[layout.sigma_hat] = (s * mesh.edge_normals).sum(axis=1)
    return x


def l2_errors(mesh, layout, x, exact_u, exact_sigma):
    """L2(Omega) errors of the u and sigma components of ``x``."""
    bary, w = collapsed_triangle(5)
    pts = element_points(mesh, bary)
    nT, nq = pts.shape[:2]
    flat = pts.reshape(-1, 2)
    uh, sh, _, _ = layout.split(x)
    area = mesh.areas
    du = np.asarray(exact_u(flat)).reshape(nT, nq) - uh[:, None]
    ds = np.asarray(exact_sigma(flat)).reshape(nT, nq, 2) - sh[:, None, :]
    wq = 2.0 * area[:, None] * w[None, :]
    err_u = np.sqrt((wq * du**2).sum())
    err_s = np.sqrt((wq * (ds**2).sum(axis=2)).sum())
    return float(err_u), float(err_s)


def dof_points(mesh, layout):
    """Representative point of every trial dof (centroids, vertices, edge midpoints)."""
    c = mesh.centroids
    return np.vstack([c, c, c, mesh.vertices, mesh.edge_midpoints])[:layout.ndof]


def boundary_traces(layout, x):
    """(u_hat on boundary S1 nodes, sigma_hat on boundary edges)."""
    x = np.asarray(x)
    return x[layout.boundary_u_hat_dofs], x[layout.boundary_sigma_hat_dofs]


def boundary_of(mesh):
    return BoundaryMesh.from_mesh(mesh)
