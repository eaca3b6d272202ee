"""Laplace boundary integral operators on closed polygons (2D).

Kernel ``G(z) = -log|z| / (2 pi)``; the double-layer kernel is
``dG/dn_y (x - y) = (x - y).n_y / (2 pi |x - y|^2)`` with ``n`` the outward
normal of the interior domain.  ``K`` is the principal-value double-layer
operator, so that for interior harmonic ``u``::

    V(du/dn) + (1/2 - K) u = u,        W u + (1/2 + K') du/dn = du/dn.

Basis conventions on a :class:`~dpgbem.mesh.BoundaryMesh` with ``n``
segments: P0 function ``chi_k`` is 1 on segment ``k``; S1 hat ``eta_a`` is 1
at node ``a``.

Inner integrals over a source segment are evaluated in closed form; the
outer integral uses Gauss rules, geometrically graded toward the source when
the pair touches or is close.  Coincident P0/S1-tested single-layer entries
are closed form.
"""

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.special import xlogy

from .quadrature import gauss_segment
from .spaces import boundary_mass_s1, boundary_mass_s1p0

INV2PI = 1.0 / (2.0 * np.pi)
N_FAR = 16
GRADING = 0.25
GRADING_LEVELS = 12
NEAR_RATIO = 0.5


class NearSingularError(ValueError):
    """Evaluation point too close to the boundary."""

    def __init__(self, distance, threshold):
        super().__init__(f"point at distance {distance:.3e} from the boundary "
                         f"(threshold {threshold:.3e})")
        self.distance = distance


# ----------------------------------------------------------------------
# closed-form segment integrals

def _local_coordinates(x, a, b):
    d = b - a
    L = np.hypot(d[..., 0], d[..., 1])
    e = d / L[..., None]
    p = x - a
    xi = p[..., 0] * e[..., 0] + p[..., 1] * e[..., 1]
    eta = p[..., 0] * e[..., 1] - p[..., 1] * e[..., 0]
    return L, e, xi, eta


def segment_integrals(x, a, b, on_segment=None, gradient=False):
    """Closed-form integrals over the segment [a, b] seen from x.

    With ``tau`` the arc length from ``a``, ``r = |x - y(tau)|`` and ``eta``
    the signed distance of ``x`` along the outward normal of the segment::

        S0 = int log r,        S1 = int tau log r,
        D0 = int eta / r^2,    D1 = int tau eta / r^2.

    ``on_segment`` flags points lying on the segment itself; there ``eta`` is
    set to zero and ``D0`` to its principal value 0.  With ``gradient`` the
    derivatives with respect to (xi, eta) are returned as well, along with
    the unit tangent and normal.
    """
    L, e, xi, eta = _local_coordinates(x, a, b)
    if on_segment is not None:
        eta = np.where(on_segment, 0.0, eta)
    R1 = xi**2 + eta**2
    u2 = L - xi
    R2 = u2**2 + eta**2
    lR1 = np.log(np.where(R1 > 0, R1, 1.0))
    lR2 = np.log(np.where(R2 > 0, R2, 1.0))

    pa = a - x
    pb = b - x
    cross = pa[..., 0] * pb[..., 1] - pa[..., 1] * pb[..., 0]
    dot = pa[..., 0] * pb[..., 0] + pa[..., 1] * pb[..., 1]
    D0 = -np.arctan2(cross, dot)
    if on_segment is not None:
        D0 = np.where(on_segment, 0.0, D0)

    S0 = 0.5 * (xlogy(u2, R2) + xlogy(xi, R1)) - L + eta * D0
    S1 = xi * S0 + 0.25 * (xlogy(R2, R2) - xlogy(R1, R1) - u2**2 + xi**2)
    D1 = xi * D0 + 0.5 * eta * (lR2 - lR1)
    out = {"S0": S0, "S1": S1, "D0": D0, "D1": D1, "L": L}
    if not gradient:
        return out

    with np.errstate(divide="ignore", invalid="ignore"):
        iR1 = np.where(R1 > 0, 1.0 / R1, 0.0)
        iR2 = np.where(R2 > 0, 1.0 / R2, 0.0)
    dS0 = (0.5 * (lR1 - lR2), D0)
    dD0_xi = eta * (iR1 - iR2)
    dD0_eta = -u2 * iR2 - xi * iR1
    dS1 = (-(L - eta * D0) + xi * dS0[0], D1)
    dD1_xi = D0 + xi * dD0_xi - eta * (u2 * iR2 + xi * iR1)
    dD1_eta = xi * dD0_eta + 0.5 * (lR2 - lR1) + eta**2 * (iR2 - iR1)
    n = np.stack([e[..., 1], -e[..., 0]], axis=-1)
    out.update(dS0=dS0, dS1=dS1, dD0=(dD0_xi, dD0_eta), dD1=(dD1_xi, dD1_eta),
               tangent=e, normal=n)
    return out


def _to_global(dloc, e, n):
    """Convert (d/dxi, d/deta) pairs to Cartesian gradients (..., 2)."""
    return dloc[0][..., None] * e + dloc[1][..., None] * n


# ----------------------------------------------------------------------
# outer quadrature rules

@lru_cache(maxsize=None)
def graded_rule(n=N_FAR, sigma=GRADING, levels=GRADING_LEVELS):
    """Gauss rule on [0, 1] graded geometrically toward 0."""
    t, w = gauss_segment(n)
    edges = np.concatenate([[0.0], sigma ** np.arange(levels, -1, -1)])
    pts, wts = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        pts.append(lo + (hi - lo) * t)
        wts.append((hi - lo) * w)
    return np.concatenate(pts), np.concatenate(wts)


def graded_rule_toward(t_star, scale, n=N_FAR, sigma=GRADING):
    """Rule on [0, 1] graded toward the interior/boundary point ``t_star``.

    Grading stops once the sub-interval next to ``t_star`` is shorter than
    ``scale`` (relative distance of the singularity).
    """
    t, w = gauss_segment(n)
    pts, wts = [], []
    for lo, hi, toward_lo in ((t_star, 1.0, True), (0.0, t_star, False)):
        length = hi - lo
        if length <= 0:
            continue
        levels = 0
        while length * sigma**levels > max(scale, 1e-7) and levels < 40:
            levels += 1
        rel = np.concatenate([[0.0], sigma ** np.arange(levels, -1, -1)])
        for r0, r1 in zip(rel[:-1], rel[1:]):
            if toward_lo:
                s0, s1 = lo + r0 * length, lo + r1 * length
            else:
                s0, s1 = hi - r1 * length, hi - r0 * length
            pts.append(s0 + (s1 - s0) * t)
            wts.append((s1 - s0) * w)
    return np.concatenate(pts), np.concatenate(wts)


def _point_segment(x, a, b):
    d = b - a
    t = np.clip(((x - a) * d).sum(-1) / (d * d).sum(-1), 0.0, 1.0)
    return np.linalg.norm(a + t[..., None] * d - x, axis=-1), t


def segment_distance(a1, b1, a2, b2):
    """Distance between segments and the parameter on segment 1 of the closest point."""
    d1, t1 = _point_segment(a2, a1, b1)
    d2, t2 = _point_segment(b2, a1, b1)
    d3, _ = _point_segment(a1, a2, b2)
    d4, _ = _point_segment(b1, a2, b2)
    D = np.stack([d1, d2, d3, d4])
    T = np.stack([t1, t2, np.zeros_like(t1), np.ones_like(t1)])
    k = np.argmin(D, axis=0)
    idx = np.arange(D.shape[1]) if D.ndim == 2 else ()
    return D[k, idx], T[k, idx]


# ----------------------------------------------------------------------
# Galerkin matrices

def _pair_moments(boundary, j, k, s, w):
    """Outer integrals for segment pairs (j, k) with rule (s, w) on test segment j.

    ``s``/``w`` have shape (npairs, nq) in parameter space of segment j.
    Returns m (npairs, 2): int psi_p S0, and dmat (npairs, 2, 2): int psi_p D_q
    with D_q the double-layer integral against the hat of node q of segment k.
    """
    A, B = boundary.start, boundary.end
    Lj = boundary.lengths[j]
    x = A[j][:, None, :] + s[..., None] * (B[j] - A[j])[:, None, :]
    ak = np.broadcast_to(A[k][:, None, :], x.shape)
    bk = np.broadcast_to(B[k][:, None, :], x.shape)
    I = segment_integrals(x, ak, bk)
    Lk = boundary.lengths[k][:, None]
    Dq = np.stack([I["D0"] - I["D1"] / Lk, I["D1"] / Lk], axis=-1)
    ww = w * Lj[:, None]
    psi = np.stack([1.0 - s, s], axis=-1)
    m = np.einsum("pq,pqa,pq->pa", ww, psi, I["S0"])
    dmat = np.einsum("pq,pqa,pqb->pab", ww, psi, Dq)
    return m, dmat


@dataclass(frozen=True, eq=False)
class BemMatrices:
    """Dense Galerkin matrices on one boundary mesh.

    V00[j, k] = <chi_j, V chi_k>;  V10[a, k] = <eta_a, V chi_k>;
    K11[a, b] = <eta_a, K eta_b>;  K01[j, b] = <chi_j, K eta_b>;
    W11 = <W eta_b, eta_a>;  M11, M10 = <eta_a, chi_k>, M00 = diag(lengths).
    """

    boundary: object
    V00: np.ndarray
    V10: np.ndarray
    K11: np.ndarray
    K01: np.ndarray
    W11: np.ndarray
    M11: np.ndarray
    M10: np.ndarray
    M00: np.ndarray

    @property
    def n(self):
        return self.boundary.n

    def mass_factor(self):
        return sla.cho_factor(self.M11)

    # moments of the combined operators -------------------------------
    def _check(self, u, s):
        u = np.asarray(u, float)
        s = np.asarray(s, float)
        if u.shape[0] != self.n or s.shape[0] != self.n:
            raise ValueError(f"expected {self.n} boundary coefficients, got {u.shape[0]} and {s.shape[0]}")
        return u, s

    def vgamma_moments(self, u, s, test="S1"):
        """Moments of V s + (1/2 - K) u against S1 hats, P0 boxes or the constant 1."""
        u, s = self._check(u, s)
        if test == "S1":
            return self.V10 @ s + 0.5 * (self.M11 @ u) - self.K11 @ u
        p0 = self.V00 @ s + 0.5 * (self.M10.T @ u) - self.K01 @ u
        if test == "P0":
            return p0
        if test == "constant":
            return p0.sum(axis=0)
        raise ValueError(f"unknown test space {test!r}")

    def wgamma_moments(self, u, s):
        """S1-tested moments of W u + (1/2 + K') s."""
        u, s = self._check(u, s)
        return self.W11 @ u + 0.5 * (self.M10 @ s) + self.K01.T @ s

    # operator matrices acting on stacked (u, s) boundary vectors --------
    def vgamma_matrix(self, test="S1"):
        """Matrix of (u, s) -> moments of V(u, s); columns: S1 nodes then P0 edges."""
        if test == "S1":
            return np.hstack([0.5 * self.M11 - self.K11, self.V10])
        if test == "P0":
            return np.hstack([0.5 * self.M10.T - self.K01, self.V00])
        if test == "constant":
            return self.vgamma_matrix("P0").sum(axis=0)
        raise ValueError(f"unknown test space {test!r}")

    def wgamma_matrix(self):
        return np.hstack([self.W11, 0.5 * self.M10 + self.K01.T])


def assemble_V(boundary, test="P0"):
    """Single-layer matrix with P0 trial; P0 (``V00``) or S1 (``V10``) test."""
    V00, V10, _, _ = _assemble_core(boundary)
    if test == "P0":
        return V00
    if test == "S1":
        return V10
    raise ValueError(f"unknown test space {test!r}")


def assemble_K(boundary, test="S1"):
    """Double-layer matrix with S1 trial; S1 (``K11``) or P0 (``K01``) test."""
    _, _, K11, K01 = _assemble_core(boundary)
    if test == "S1":
        return K11
    if test == "P0":
        return K01
    raise ValueError(f"unknown test space {test!r}")


def tangential_derivative_matrix(boundary):
    """(n_seg x n_nodes) map from S1 nodal values to edgewise arc-length derivatives."""
    n = boundary.n
    L = boundary.lengths
    D = np.zeros((n, n))
    k = np.arange(n)
    D[k, k] = -1.0 / L
    D[k, (k + 1) % n] += 1.0 / L
    return D


def assemble_W(boundary, V00=None):
    """Hypersingular matrix via <W u, v> = <V u', v'> (closed boundary)."""
    V00 = assemble_V(boundary, "P0") if V00 is None else V00
    Dt = tangential_derivative_matrix(boundary)
    W = Dt.T @ V00 @ Dt
    return 0.5 * (W + W.T)


def assemble_bem(boundary):
    """All Galerkin and mass matrices of one boundary mesh."""
    V00, V10, K11, K01 = _assemble_core(boundary)
    return BemMatrices(boundary, V00, V10, K11, K01, assemble_W(boundary, V00),
                       boundary_mass_s1(boundary), boundary_mass_s1p0(boundary),
                       np.diag(boundary.lengths))


def _assemble_core(boundary):
    n = boundary.n
    L = boundary.lengths
    if np.any(L <= 0):
        raise ValueError("zero-length boundary segment")
    J, K = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    J, K = J.ravel(), K.ravel()
    A, B = boundary.start, boundary.end
    dist, tstar = segment_distance(A[J], B[J], A[K], B[K])
    self_pair = J == K
    nxt = K == (J + 1) % n  # shared node = end of j
    prv = K == (J - 1) % n  # shared node = start of j
    touching = (nxt | prv) & ~self_pair
    near = ~self_pair & ~touching & (dist < NEAR_RATIO * L[J])
    far = ~(self_pair | touching | near)

    m = np.zeros((n * n, 2))
    dm = np.zeros((n * n, 2, 2))

    # well separated pairs: plain Gauss, processed in chunks
    t, w = gauss_segment(N_FAR)
    idx = np.flatnonzero(far)
    for chunk in np.array_split(idx, max(1, idx.size // 20000 + 1)):
        if chunk.size == 0:
            continue
        s = np.broadcast_to(t, (chunk.size, t.size))
        ww = np.broadcast_to(w, (chunk.size, w.size))
        m[chunk], dm[chunk] = _pair_moments(boundary, J[chunk], K[chunk], s, ww)

    # touching pairs: graded toward the shared node
    tg, wg = graded_rule()
    for mask, flip in ((nxt & touching & ~prv, True), (prv & touching & ~nxt, False),
                       (nxt & prv & ~self_pair, None)):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        if flip is None:  # three-segment boundary: both ends shared
            tt = np.concatenate([tg * 0.5, 1.0 - tg * 0.5])
            wt = np.concatenate([wg * 0.5, wg * 0.5])
        else:
            tt = 1.0 - tg if flip else tg
            wt = wg
        s = np.broadcast_to(tt, (idx.size, tt.size))
        ww = np.broadcast_to(wt, (idx.size, wt.size))
        m[idx], dm[idx] = _pair_moments(boundary, J[idx], K[idx], s, ww)

    # close but not touching: graded toward the closest point
    for p in np.flatnonzero(near):
        tt, wt = graded_rule_toward(float(tstar[p]), float(dist[p] / L[J[p]]))
        mm, dd = _pair_moments(boundary, J[p:p + 1], K[p:p + 1], tt[None], wt[None])
        m[p], dm[p] = mm[0], dd[0]

    # coincident pairs: closed form, D vanishes on a straight segment
    ii = np.flatnonzero(self_pair)
    Ls = L[J[ii]]
    half = 0.5 * (xlogy(Ls**2, Ls) - 1.5 * Ls**2)
    m[ii, 0] = half
    m[ii, 1] = half
    dm[ii] = 0.0

    m *= -INV2PI
    dm *= INV2PI
    node = np.stack([J, (J + 1) % n], axis=1)
    knode = np.stack([K, (K + 1) % n], axis=1)
    V00 = m.sum(axis=1).reshape(n, n)
    V10 = np.zeros((n, n))
    np.add.at(V10, (node[:, 0], K), m[:, 0])
    np.add.at(V10, (node[:, 1], K), m[:, 1])
    K11 = np.zeros((n, n))
    K01 = np.zeros((n, n))
    for pa in range(2):
        for qb in range(2):
            np.add.at(K11, (node[:, pa], knode[:, qb]), dm[:, pa, qb])
    for qb in range(2):
        np.add.at(K01, (J, knode[:, qb]), dm[:, :, qb].sum(axis=1))
    V00 = 0.5 * (V00 + V00.T)
    return V00, V10, K11, K01


# ----------------------------------------------------------------------
# potentials and tangential derivatives

def _min_distance(boundary, points):
    d, _ = _point_segment(points[:, None, :], boundary.start[None], boundary.end[None])
    k = np.argmin(d, axis=1)
    return d[np.arange(len(points)), k], boundary.lengths[k]


def eval_potentials(boundary, phi, v, points):
    """Single-layer potential of P0 density ``phi`` and double-layer potential
    of S1 density ``v`` at points off the boundary.

    Returns
    -------
    single, double : (m,) ndarrays
    """
    points = np.atleast_2d(np.asarray(points, float))
    dist, h = _min_distance(boundary, points)
    bad = dist < 1e-8 * h
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise NearSingularError(float(dist[i]), float(1e-8 * h[i]))
    phi = np.asarray(phi, float)
    v = np.asarray(v, float)
    x = points[:, None, :]
    a = np.broadcast_to(boundary.start[None], (len(points), boundary.n, 2))
    b = np.broadcast_to(boundary.end[None], (len(points), boundary.n, 2))
    I = segment_integrals(x, a, b)
    L = boundary.lengths[None, :]
    single = -INV2PI * (I["S0"] @ phi)
    vk, vk1 = v, np.roll(v, -1)
    double = INV2PI * ((I["D0"] - I["D1"] / L) @ vk + (I["D1"] / L) @ vk1)
    return single, double


def representation(boundary, u_jump, phi_jump, points):
    """Exterior field D(u_jump) - S(phi_jump) at points."""
    single, double = eval_potentials(boundary, phi_jump, u_jump, points)
    return double - single


def tangential_derivative_vgamma(boundary, v, psi, n_points=N_FAR, chunk=64):
    """Arc-length derivative of V psi + (1/2 - K) v at Gauss points of every segment.

    Returns
    -------
    values : (n_seg, n_points) derivative values
    weights : (n_seg, n_points) quadrature weights including the segment length
    """
    v = np.asarray(v, float)
    psi = np.asarray(psi, float)
    n = boundary.n
    t, w = gauss_segment(n_points)
    A, B = boundary.start, boundary.end
    L = boundary.lengths
    v_next = np.roll(v, -1)
    values = np.empty((n, n_points))
    for lo in range(0, n, chunk):
        j = np.arange(lo, min(lo + chunk, n))
        x = A[j, None, :] + t[None, :, None] * (B - A)[j, None, :]  # (c, q, 2)
        X = np.broadcast_to(x[:, :, None, :], (len(j), n_points, n, 2))
        a = np.broadcast_to(A[None, None], X.shape)
        b = np.broadcast_to(B[None, None], X.shape)
        on_seg = np.broadcast_to((j[:, None] == np.arange(n)[None, :])[:, None, :], X.shape[:3])
        I = segment_integrals(X, a, b, on_segment=on_seg, gradient=True)
        e, nn = I["tangent"], I["normal"]
        tj = boundary.tangents[j, None, None, :]

        def along(d):
            return (_to_global(d, e, nn) * tj).sum(-1)

        dD1 = along(I["dD1"]) / L
        dV = -INV2PI * (along(I["dS0"]) @ psi)
        dK = INV2PI * ((along(I["dD0"]) - dD1) @ v + dD1 @ v_next)
        values[j] = dV - dK
    values += 0.5 * ((v_next - v) / L)[:, None]
    return values, w[None, :] * L[:, None]


def eval_tangential_residual(boundary, u_gamma, s_gamma, u0h, phi0h):
    """Per-segment ``h_e^{1/2} || d/ds V((u0h, phi0h) - (u_gamma, s_gamma)) ||_{L2(e)}``."""
    v = np.asarray(u0h, float) - np.asarray(u_gamma, float)
    psi = np.asarray(phi0h, float) - np.asarray(s_gamma, float)
    vals, wts = tangential_derivative_vgamma(boundary, v, psi)
    return np.sqrt(boundary.lengths * (wts * vals**2).sum(axis=1))


# ----------------------------------------------------------------------
# binary fixtures

_MAGIC = b"BEM2"


def dump_matrix(path, A):
    """Write ``A`` as row-major float64 after a 16-byte header.

    Header: magic ``BEM2``, 4 zero bytes, rows and cols as little-endian uint32.
    """
    A = np.ascontiguousarray(A, dtype="<f8")
    if A.ndim != 2:
        raise ValueError("expected a matrix")
    with open(path, "wb") as fh:
        fh.write(_MAGIC + b"\0\0\0\0" + struct.pack("<II", *A.shape))
        fh.write(A.tobytes())


def load_matrix(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16 or head[:4] != _MAGIC:
            raise ValueError("not a BEM2 matrix file")
        rows, cols = struct.unpack("<II", head[8:])
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError("truncated BEM2 matrix file")
    return data.reshape(rows, cols).copy()
