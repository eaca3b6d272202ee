"""Ultra-weak DPG discretisation with element-local optimal test functions.

For ``w = (u, sigma, u_hat, sigma_hat)`` and ``v = (v, tau)``::

    b(w, v) = (u, div tau) + (sigma, grad v + tau)
              - <u_hat, tau.n>_S - <sigma_hat, v>_S
    L(v)    = (f, v)

Test inner product per element: ``(v w) + (grad v, grad w) + (tau, rho)
+ (div tau, div rho)``.  Everything is stored block-wise per triangle; the
trial-to-test map is a set of independent 18x18 solves.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .quadrature import collapsed_triangle, gauss_segment
from .spaces import (N_TEST_LOCAL, N_TRIAL_LOCAL, DofLayout, barycentric_gradients,
                     element_points, p2_gradients, p2_values)


class FactorizationError(RuntimeError):
    """A Gram block that should be SPD failed to factorise."""


@dataclass(frozen=True, eq=False)
class UltraWeakSystem:
    """Element blocks of the discrete ultra-weak form.

    gram : (nT, 18, 18) Gram blocks of the test inner product.
    bmat : (nT, 18, 9) blocks b(trial_j, test_i).
    load : (nT, 18) blocks (f, v_i).
    dofs : (nT, 9) global trial indices of the local trial functions.
    factor : optional pair (L, d) of lower-triangular blocks and scales with
        diag(d) L L^T diag(d) = gram, computed without forming the Gram
        matrix (see :func:`assemble_ultraweak`).
    """

    layout: DofLayout
    gram: np.ndarray
    bmat: np.ndarray
    load: np.ndarray
    dofs: np.ndarray
    factor: tuple = None

    @property
    def n_triangles(self):
        return len(self.gram)

    def cholesky(self):
        """Factors (L, d) with diag(d) L L^T diag(d) = G blockwise.

        The Jacobi scaling ``d = sqrt(diag G)`` keeps the factorisation
        robust on strongly graded meshes.
        """
        if self.factor is not None:
            return self.factor
        d = np.sqrt(np.einsum("tii->ti", self.gram))
        if not np.all(d > 0):
            raise FactorizationError("test Gram block has a nonpositive diagonal")
        try:
            L = np.linalg.cholesky(self.gram / (d[:, :, None] * d[:, None, :]))
        except np.linalg.LinAlgError as exc:
            raise FactorizationError("test Gram block is not positive definite") from exc
        return L, d

    def whiten(self, X, factor=None):
        """Blocks Y with Y^T Y = X^T G^{-1} X; X has shape (nT, 18) or (nT, 18, k)."""
        L, d = self.cholesky() if factor is None else factor
        vec = X.ndim == 2
        X = X[..., None] if vec else X
        Y = np.linalg.solve(L, X / d[:, :, None])
        return Y[..., 0] if vec else Y

    def global_B(self):
        """Sparse (18 nT x ndof) matrix with entries b(u_j, v_i)."""
        nT = self.n_triangles
        rows = (N_TEST_LOCAL * np.arange(nT))[:, None, None] + np.arange(N_TEST_LOCAL)[None, :, None]
        rows = np.broadcast_to(rows, self.bmat.shape)
        cols = np.broadcast_to(self.dofs[:, None, :], self.bmat.shape)
        return sp.csr_matrix((self.bmat.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(N_TEST_LOCAL * nT, self.layout.ndof))

    def global_G(self):
        return sp.block_diag(list(self.gram), format="csr")

    def global_load(self):
        return self.load.ravel().copy()

    def local(self, x):
        """Gather a global trial vector into (nT, 9) element vectors."""
        return np.asarray(x)[self.dofs]


def _element_geometry(mesh):
    p = mesh.vertices[mesh.triangles]
    area = mesh.areas
    edge_vec = np.roll(p, -1, axis=1) - p  # local edge k: p_k -> p_{k+1}
    length = np.linalg.norm(edge_vec, axis=2)
    normal = np.stack([edge_vec[..., 1], -edge_vec[..., 0]], axis=2) / length[..., None]
    return area, length, normal


def assemble_ultraweak(mesh, layout=None, f=None):
    """Element Gram, b and load blocks.

    ``f`` is a callable on (m, 2) points, a constant, or None (zero source).
    """
    layout = DofLayout.from_mesh(mesh) if layout is None else layout
    nT = mesh.n_triangles
    bary, wq = collapsed_triangle(5)
    area, length, normal = _element_geometry(mesh)
    phi = p2_values(bary)  # (nq, 6)
    gphi = p2_gradients(bary, barycentric_gradients(mesh))  # (nT, nq, 6, 2)
    w = 2.0 * area[:, None] * wq[None, :]  # (nT, nq)

    mass = np.einsum("tq,qi,qj->tij", w, phi, phi)
    dx = gphi[..., 0]
    dy = gphi[..., 1]
    Kxx = np.einsum("tq,tqi,tqj->tij", w, dx, dx)
    Kyy = np.einsum("tq,tqi,tqj->tij", w, dy, dy)
    Kxy = np.einsum("tq,tqi,tqj->tij", w, dx, dy)
    gram = np.zeros((nT, N_TEST_LOCAL, N_TEST_LOCAL))
    v, tx, ty = slice(0, 6), slice(6, 12), slice(12, 18)
    gram[:, v, v] = mass + Kxx + Kyy
    gram[:, tx, tx] = mass + Kxx
    gram[:, ty, ty] = mass + Kyy
    gram[:, tx, ty] = Kxy
    gram[:, ty, tx] = np.swapaxes(Kxy, 1, 2)
    factor = _gram_factor(w, phi, dx, dy, np.sqrt(np.einsum("tii->ti", gram)))

    int_phi = np.einsum("tq,qi->ti", w, phi)
    int_dx = np.einsum("tq,tqi->ti", w, dx)
    int_dy = np.einsum("tq,tqi->ti", w, dy)

    B = np.zeros((nT, N_TEST_LOCAL, N_TRIAL_LOCAL))
    # u: (u, div tau)
    B[:, tx, 0] = int_dx
    B[:, ty, 0] = int_dy
    # sigma: (sigma, grad v + tau)
    B[:, v, 1] = int_dx
    B[:, tx, 1] = int_phi
    B[:, v, 2] = int_dy
    B[:, ty, 2] = int_phi

    # skeleton terms, edge by edge
    ts, ws = gauss_segment(7)
    for k in range(3):
        kk = (k + 1) % 3
        eb = np.zeros((len(ts), 3))
        eb[:, k] = 1.0 - ts
        eb[:, kk] = ts
        phi_e = p2_values(eb)  # (ns, 6)
        hat = eb  # vertex hat functions restricted to the edge
        # -<u_hat, tau.n>
        m = np.einsum("s,sa,si->ia", ws, hat, phi_e)  # (6, 3) reference edge moments
        m = length[:, k, None, None] * m[None]
        B[:, tx, 3:6] -= normal[:, k, 0, None, None] * m
        B[:, ty, 3:6] -= normal[:, k, 1, None, None] * m
        # -<sigma_hat, v>, sigma_hat|dT = sign * sigma_hat_edge
        sgn = mesh.tri_edge_sign[:, k]
        int_e = length[:, k, None] * (ws @ phi_e)[None, :]
        B[:, v, 6 + k] -= sgn[:, None] * int_e

    load = np.zeros((nT, N_TEST_LOCAL))
    if f is not None:
        if callable(f):
            pts = element_points(mesh, bary)
            fv = np.asarray(f(pts.reshape(-1, 2)), float).reshape(nT, -1)
        else:
            fv = np.full((nT, len(wq)), float(f))
        load[:, v] = np.einsum("tq,tq,qi->ti", w, fv, phi)

    return UltraWeakSystem(layout, gram, B, load, layout.local_dofs(mesh), factor)


def _gram_factor(w, phi, dx, dy, d, chunk=2048):
    """Triangular factors of the Gram blocks from a QR of their square root.

    With rows ``sqrt(w_q)`` times (v, dv/dx, dv/dy, tau_x, tau_y, div tau) at
    every quadrature point, ``Q^T Q = G``.  Factoring ``Q`` instead of ``G``
    avoids squaring the condition number, which grows like h^-2.
    """
    nT, nq = w.shape
    L = np.empty((nT, N_TEST_LOCAL, N_TEST_LOCAL))
    for lo in range(0, nT, chunk):
        sl = slice(lo, min(lo + chunk, nT))
        m = sl.stop - sl.start
        sw = np.sqrt(w[sl])[:, :, None]
        Q = np.zeros((m, 6, nq, N_TEST_LOCAL))
        Q[:, 0, :, 0:6] = sw * phi[None]
        Q[:, 1, :, 0:6] = sw * dx[sl]
        Q[:, 2, :, 0:6] = sw * dy[sl]
        Q[:, 3, :, 6:12] = sw * phi[None]
        Q[:, 4, :, 12:18] = sw * phi[None]
        Q[:, 5, :, 6:12] = sw * dx[sl]
        Q[:, 5, :, 12:18] = sw * dy[sl]
        Q = Q.reshape(m, 6 * nq, N_TEST_LOCAL) / d[sl, None, :]
        R = np.linalg.qr(Q, mode="r")
        L[sl] = np.swapaxes(R, 1, 2)
    diag = np.abs(np.einsum("tii->ti", L))
    if not np.all(diag > 0):
        raise FactorizationError("test Gram block is singular")
    return L, d


def trial_to_test(system, beta=1.0):
    """Blocks (nT, 18, 9) of Theta = beta * G^{-1} B (optimal test functions)."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    L, d = system.cholesky()
    Y = system.whiten(system.bmat, (L, d))
    return beta * np.linalg.solve(np.swapaxes(L, 1, 2), Y) / d[:, :, None]


def trial_to_test_matrix(system, beta=1.0):
    """Theta as a sparse (18 nT x ndof) matrix."""
    theta = trial_to_test(system, beta)
    rep = UltraWeakSystem(system.layout, system.gram, theta, system.load, system.dofs)
    return rep.global_B()


def dpg_normal_block(system, beta=1.0):
    """A = beta B^T G^{-1} B (sparse) and r = beta B^T G^{-1} l."""
    if not beta > 0:
        raise ValueError("beta must be positive")
    factor = system.cholesky()
    Y = system.whiten(system.bmat, factor)
    z = system.whiten(system.load, factor)
    A_loc = np.einsum("tki,tkj->tij", Y, Y)
    r_loc = np.einsum("tki,tk->ti", Y, z)
    if beta != 1.0:
        A_loc = beta * A_loc
        r_loc = beta * r_loc
    d = system.dofs
    n = system.layout.ndof
    rows = np.broadcast_to(d[:, :, None], A_loc.shape).ravel()
    cols = np.broadcast_to(d[:, None, :], A_loc.shape).ravel()
    A = sp.csr_matrix((A_loc.ravel(), (rows, cols)), shape=(n, n))
    r = np.zeros(n)
    np.add.at(r, d.ravel(), r_loc.ravel())
    return A, r


def energy_residual(system, x, per_element=False):
    """||B x - L||_{V'} on the enriched test space.

    Returns the total, and with ``per_element`` also the element squares
    ``r_T^T G_T^{-1} r_T``.
    """
    r = system.load - np.einsum("tij,tj->ti", system.bmat, system.local(x))
    z = system.whiten(r)
    sq = (z**2).sum(axis=1)
    total = float(np.sqrt(sq.sum()))
    return (total, sq) if per_element else total
