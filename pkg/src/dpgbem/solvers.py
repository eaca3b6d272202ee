"""Linear solvers for coupled systems: sparse direct, CG and restarted GMRES."""

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .coupling import Coupling


class SingularMatrixError(RuntimeError):
    """Direct factorisation hit a (numerically) zero pivot."""


class WrongMethodError(ValueError):
    """Solver does not apply to this system variant."""


class SPDViolationError(RuntimeError):
    """CG met a direction with p^T A p <= 0."""

    def __init__(self, iteration, curvature):
        super().__init__(f"p^T A p = {curvature:.3e} <= 0 at iteration {iteration}")
        self.iteration = iteration
        self.curvature = curvature


class BreakdownError(RuntimeError):
    """GMRES Arnoldi breakdown without a solution."""

    def __init__(self, iteration):
        super().__init__(f"GMRES breakdown at iteration {iteration}")
        self.iteration = iteration


@dataclass(frozen=True)
class SolveReport:
    """Outcome of a linear solve; ``residual`` is recomputed from the solution."""

    method: str
    iterations: int
    residual: float
    seconds: float
    converged: bool


def _operator(system):
    """(matvec, rhs, n) from a CoupledSystem or an (A, b) pair."""
    if isinstance(system, tuple):
        A, b = system
        return (lambda x: A @ x), np.asarray(b, float), A, A.shape[0]
    return system.matvec, system.rhs, system.A, system.n


def _relres(matvec, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(matvec(x) - b)
    return float(r / nb) if nb > 0 else float(r)


def nested_dissection(points, adj, leaf=64):
    """Fill-reducing ordering by recursive coordinate bisection.

    The separator of each split is the set of nodes on the lower side with a
    neighbour on the upper side; separators are ordered after both halves.
    """
    adj = sp.csr_matrix(adj)
    n = adj.shape[0]
    upper = np.zeros(n, bool)
    out = []
    stack = [(np.arange(n), False)]
    # iterative post-order: (ids, emit) pairs, emit=True means append as is
    while stack:
        ids, emit = stack.pop()
        if emit or len(ids) <= leaf:
            out.append(ids)
            continue
        p = points[ids]
        order = np.argsort(p[:, int(np.argmax(np.ptp(p, axis=0)))], kind="stable")
        h = len(ids) // 2
        lo, hi = ids[order[:h]], ids[order[h:]]
        upper[hi] = True
        sub = adj[lo]
        rows = np.repeat(np.arange(len(lo)), np.diff(sub.indptr))
        sep = np.zeros(len(lo), bool)
        sep[rows[upper[sub.indices]]] = True
        upper[hi] = False
        stack += [(lo[sep], True), (hi, False), (lo[~sep], False)]
    return np.concatenate(out) if out else np.zeros(0, np.int64)


def _block_inverse(A, blocks):
    """Inverse of the block-diagonal restriction A[I, I], I = blocks.ravel()."""
    nb, k = blocks.shape
    flat = blocks.ravel()
    Aii = A[flat][:, flat].tocoo()
    bi, bj = Aii.row // k, Aii.col // k
    if np.any(bi != bj):
        raise ValueError("interior block is not block diagonal")
    D = np.zeros((nb, k, k))
    np.add.at(D, (bi, Aii.row % k, Aii.col % k), Aii.data)
    try:
        Dinv = np.linalg.inv(D)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("singular element block in static condensation") from exc
    r = (k * np.arange(nb))[:, None, None] + np.arange(k)[None, :, None]
    c = (k * np.arange(nb))[:, None, None] + np.arange(k)[None, None, :]
    shape = (nb, k, k)
    return sp.csr_matrix((Dinv.ravel(), (np.broadcast_to(r, shape).ravel(),
                                          np.broadcast_to(c, shape).ravel())),
                         shape=(nb * k, nb * k))


def _lu(K, perm=None):
    if perm is not None:
        K = K[perm][:, perm]
        opts = dict(permc_spec="NATURAL", diag_pivot_thresh=0.1, options=dict(SymmetricMode=True))
    else:
        opts = {}
    try:
        lu = spla.splu(sp.csc_matrix(K), **opts)
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc
    piv = np.abs(lu.U.diagonal())
    if not piv.min() > np.finfo(float).eps * piv.max():
        raise SingularMatrixError(f"smallest pivot {piv.min():.3e} at column {int(piv.argmin())}")
    return K, lu


def _refined_solve(K, lu, b, steps=2):
    x = lu.solve(b)
    for _ in range(steps):
        x += lu.solve(b - K @ x)
    return x


def solve_direct(system):
    """Sparse LU solve of ``A x = rhs``.

    For coupled systems the element-interior unknowns are condensed out
    first; the remaining skeleton system is ordered by nested dissection
    with the densely coupled boundary unknowns last.
    """
    matvec, b, A, n = _operator(system)
    t0 = time.perf_counter()
    data = A.data if sp.issparse(A) else np.asarray(A)
    if not np.all(np.isfinite(data)):
        raise ValueError("matrix has non-finite entries")
    blocks = getattr(system, "interior_blocks", None)
    if np.linalg.norm(b) == 0:
        x = np.zeros(n)
    elif blocks is None:
        K, lu = _lu(sp.csc_matrix(A))
        x = _refined_solve(K, lu, b)
    else:
        A = sp.csr_matrix(A)
        interior = blocks.ravel()
        skel = np.setdiff1d(np.arange(n), interior)
        Dinv = _block_inverse(A, blocks)
        Ais, Asi, Ass = A[interior][:, skel], A[skel][:, interior], A[skel][:, skel]
        K = (Ass - Asi @ (Dinv @ Ais)).tocsr()
        bs = b[skel] - Asi @ (Dinv @ b[interior])
        # symmetric diagonal equilibration; mesh grading spreads entry scales
        d = np.abs(K.diagonal())
        if not np.all(d > 0):
            raise SingularMatrixError("zero diagonal entry in the condensed system")
        d = 1.0 / np.sqrt(d)
        K = sp.diags(d) @ K @ sp.diags(d)
        bs = d * bs
        perm = None
        if system.dof_points is not None:
            on_bd = np.isin(skel, system.boundary_dofs)
            inner = np.flatnonzero(~on_bd)
            order = nested_dissection(system.dof_points[skel[inner]], K[inner][:, inner])
            perm = np.concatenate([inner[order], np.flatnonzero(on_bd)])
        Kp, lu = _lu(K, perm)
        if perm is None:
            xs = _refined_solve(Kp, lu, bs)
        else:
            xs = np.empty_like(bs)
            xs[perm] = _refined_solve(Kp, lu, bs[perm])
        xs *= d
        x = np.empty(n)
        x[skel] = xs
        x[interior] = Dinv @ (b[interior] - Ais @ xs)
    res = _relres(matvec, x, b)
    return x, SolveReport("direct", 1, res, time.perf_counter() - t0, res <= 1e-10)


def solve_cg(system, tol=1e-10, maxit=None, x0=None):
    """Conjugate gradients for the SPD least-squares system.

    Raises :class:`SPDViolationError` when a search direction has
    nonpositive curvature.
    """
    if not isinstance(system, tuple) and system.variant is not Coupling.LS:
        raise WrongMethodError(f"CG applies to the least-squares variant, not {system.variant.value}")
    matvec, b, _, n = _operator(system)
    maxit = 10 * n if maxit is None else maxit
    t0 = time.perf_counter()
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    r = b - matvec(x)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n), SolveReport("cg", 0, 0.0, time.perf_counter() - t0, True)
    p = r.copy()
    rr = r @ r
    it = 0
    while np.sqrt(rr) > tol * nb and it < maxit:
        Ap = matvec(p)
        curv = p @ Ap
        if curv <= 0:
            raise SPDViolationError(it, float(curv))
        alpha = rr / curv
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
    res = _relres(matvec, x, b)
    return x, SolveReport("cg", it, res, time.perf_counter() - t0, res <= tol)


def solve_gmres(system, tol=1e-10, restart=200, maxit=None, x0=None):
    """Restarted GMRES(m) with Givens rotations; ``maxit`` counts inner steps."""
    matvec, b, _, n = _operator(system)
    maxit = 20 * n if maxit is None else maxit
    t0 = time.perf_counter()
    x = np.zeros(n) if x0 is None else np.array(x0, float)
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros(n), SolveReport("gmres", 0, 0.0, time.perf_counter() - t0, True)
    m = max(1, min(restart, n))
    total = 0
    while total < maxit:
        r = b - matvec(x)
        beta = np.linalg.norm(r)
        if beta <= tol * nb:
            break
        V = np.zeros((n, m + 1))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[:, 0] = r / beta
        k_used = 0
        for k in range(m):
            w = matvec(V[:, k])
            for i in range(k + 1):  # modified Gram-Schmidt, one reorthogonalisation
                H[i, k] = V[:, i] @ w
                w -= H[i, k] * V[:, i]
            for i in range(k + 1):
                c = V[:, i] @ w
                H[i, k] += c
                w -= c * V[:, i]
            H[k + 1, k] = np.linalg.norm(w)
            for i in range(k):
                tmp = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = tmp
            den = np.hypot(H[k, k], H[k + 1, k])
            if den == 0:
                raise BreakdownError(total)
            hk1 = H[k + 1, k]
            cs[k], sn[k] = H[k, k] / den, hk1 / den
            H[k, k] = den
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            lucky = hk1 <= 1e-14 * den
            if not lucky:
                V[:, k + 1] = w / hk1
            if abs(g[k + 1]) <= tol * nb or lucky or total >= maxit:
                break
        y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used])
        x += V[:, :k_used] @ y
    res = _relres(matvec, x, b)
    return x, SolveReport("gmres", total, res, time.perf_counter() - t0, res <= tol)


def solve(system, method="direct", **kwargs):
    return {"direct": solve_direct, "cg": solve_cg, "gmres": solve_gmres}[method](system, **kwargs)
