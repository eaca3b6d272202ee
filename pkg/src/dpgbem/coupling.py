"""Boundary coupling forms and the coupled DPG-BEM linear system.

Boundary trial vectors are stacked as ``z = [u_Gamma (S1 nodes), s_Gamma (P0
edges)]`` in boundary-loop order, matching
:attr:`~dpgbem.spaces.DofLayout.boundary_dofs`.  Every coupling form is a
dense matrix on ``z``; it is scattered into the full trial space with the 0/1
selection of boundary dofs.

Variants (test function ``w``, trial ``u``)::

    LS: <Pi V(gu), Pi V(gw)>_{H^1/2}
    HY: <W(gu), g0 w> + <1, V(gu)><1, V(gw)>
    SL: <gn w, V(gu)> + <1, V(gu)><1, V(gw)>
    CA: <W(gu), g0 w> + <gn w, V(gu)> + <1, V(gu)><1, V(gw)>

with ``V(u, phi) = V phi + (1/2 - K) u`` and ``W(u, phi) = W u + (1/2 + K') phi``.
"""

import enum
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .dpg import dpg_normal_block
from .mesh import prolongation
from .spaces import boundary_mass_s1


class H12Variant(enum.Enum):
    W_STABILIZED = "w"
    MULTILEVEL = "ml"


class Coupling(enum.Enum):
    LS = "ls"
    HY = "hy"
    SL = "sl"
    CA = "ca"


class UnsupportedVariantError(ValueError):
    """Requested H^{1/2} product is not defined on the given hierarchy."""


class CompatibilityWarning(UserWarning):
    """Data violate int f + int phi0 = 0 beyond tolerance."""


@dataclass(frozen=True, eq=False)
class H12Product:
    """Discrete H^{1/2}(Gamma) inner product on S1 boundary dofs.

    ``P`` is SPD; ``hierarchy`` holds the boundary meshes (coarsest first) for
    the multilevel variant.
    """

    variant: H12Variant
    P: np.ndarray
    hierarchy: tuple = ()

    def norm(self, x):
        return float(np.sqrt(x @ self.P @ x))


def _is_uniform_chain(boundaries):
    return all(f.n == 2 * c.n for c, f in zip(boundaries[:-1], boundaries[1:]))


def build_h12_product(variant, boundaries, bem=None):
    """Assemble ``P`` on the finest mesh of ``boundaries`` (coarsest first).

    ``W_STABILIZED`` only uses the finest boundary and its hypersingular
    matrix (taken from ``bem`` when given).  ``MULTILEVEL`` requires a uniform
    refinement chain.
    """
    variant = H12Variant(variant)
    if not isinstance(boundaries, (list, tuple)):
        boundaries = [boundaries]
    fine = boundaries[-1]
    M = boundary_mass_s1(fine)
    if variant is H12Variant.W_STABILIZED:
        if bem is None:
            from .bem import assemble_W
            W = assemble_W(fine)
        else:
            W = bem.W11
        m = M @ np.ones(fine.n)
        P = W + np.outer(m, m)
        hierarchy = (fine,)
    else:
        if not _is_uniform_chain(boundaries):
            raise UnsupportedVariantError("multilevel product needs a uniform refinement chain")
        L = len(boundaries) - 1
        P = np.zeros((fine.n, fine.n))
        Q_prev = np.zeros_like(P)
        for level, coarse in enumerate(boundaries):
            if level == L:
                Q = M
            else:
                I = prolongation(coarse, fine)
                T = M @ I
                Q = T @ sla.solve(boundary_mass_s1(coarse), T.T, assume_a="pos")
            P += 2.0**level * (Q - Q_prev)
            Q_prev = Q
        hierarchy = tuple(boundaries)
    P = 0.5 * (P + P.T)
    try:
        sla.cholesky(P)
    except np.linalg.LinAlgError as exc:
        raise UnsupportedVariantError("H^1/2 product matrix is not positive definite") from exc
    return H12Product(variant, P, hierarchy)


# ----------------------------------------------------------------------
# boundary forms on stacked vectors z = [u_Gamma, s_Gamma]

def _selectors(n):
    Eu = np.hstack([np.eye(n), np.zeros((n, n))])
    Es = np.hstack([np.zeros((n, n)), np.eye(n)])
    return Eu, Es


def _rank_one(bem):
    s = bem.vgamma_matrix("constant")
    return s, np.outer(s, s)


def assemble_c_ls(bem, h12):
    """C = O^T M^-1 P M^-1 O and the map z_data -> rhs."""
    O = bem.vgamma_matrix("S1")
    if h12.P.shape != (bem.n, bem.n):
        raise ValueError("H^1/2 product and BEM matrices live on different meshes")
    Mf = bem.mass_factor()
    X = sla.cho_solve(Mf, O)  # M^-1 O
    C = X.T @ h12.P @ X
    C = 0.5 * (C + C.T)
    return C, C.copy()


def _hy_part(bem):
    Eu, _ = _selectors(bem.n)
    return Eu.T @ bem.wgamma_matrix()


def _sl_part(bem):
    _, Es = _selectors(bem.n)
    return Es.T @ bem.vgamma_matrix("P0")


def assemble_c_hy(bem):
    _, S = _rank_one(bem)
    C = _hy_part(bem) + S
    return C, C.copy()


def assemble_c_sl(bem):
    _, S = _rank_one(bem)
    C = _sl_part(bem) + S
    return C, C.copy()


def assemble_c_ca(bem):
    _, S = _rank_one(bem)
    C = _hy_part(bem) + _sl_part(bem) + S
    return C, C.copy()


def assemble_coupling(variant, bem, h12=None):
    """Boundary matrix C and the data matrix R (rhs_boundary = R @ z_data)."""
    variant = Coupling(variant)
    if variant is Coupling.LS:
        if h12 is None:
            raise ValueError("least-squares coupling needs an H^1/2 product")
        return assemble_c_ls(bem, h12)
    return {Coupling.HY: assemble_c_hy, Coupling.SL: assemble_c_sl,
            Coupling.CA: assemble_c_ca}[variant](bem)


# ----------------------------------------------------------------------
# coupled system

@dataclass(frozen=True, eq=False)
class CoupledSystem:
    """Coupled matrix ``A = A_dpg + R^T C R`` and right-hand side."""

    A: sp.csr_matrix
    rhs: np.ndarray
    variant: Coupling
    beta: float
    A_dpg: sp.csr_matrix
    r_dpg: np.ndarray
    C: np.ndarray
    boundary_dofs: np.ndarray
    interior_blocks: Optional[np.ndarray] = None
    dof_points: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.A.shape[0]

    def matvec(self, x):
        y = self.A_dpg @ x
        b = self.boundary_dofs
        y[b] += self.C @ x[b]
        return y

    def is_symmetric(self):
        return self.variant is Coupling.LS


def check_compatibility(system, boundary, phi0h, rtol=1e-8):
    """Warn when int f + int phi0h is not small relative to both terms."""
    int_f = float(system.load[:, :3].sum())
    int_phi = float(boundary.lengths @ np.asarray(phi0h))
    scale = max(abs(int_f), abs(int_phi))
    defect = abs(int_f + int_phi)
    if scale > 0 and defect > rtol * scale:
        warnings.warn(f"data compatibility defect {defect:.3e} (scale {scale:.3e})",
                      CompatibilityWarning, stacklevel=2)
    return defect


def build_system(system, bem, variant, u0h, phi0h, beta=1.0, h12=None, dof_points=None):
    """Assemble the coupled system for the ultra-weak ``system`` and BEM data.

    Parameters
    ----------
    system : UltraWeakSystem
        Element blocks, including the volume load.
    bem : BemMatrices
        Matrices on the boundary of the same mesh.
    variant : Coupling or str
    u0h, phi0h : ndarray
        S1 and P0 coefficients of the jump data.
    beta : float
        Weight of the DPG block.
    h12 : H12Product, optional
        Required for the least-squares variant.
    dof_points : (ndof, 2) ndarray, optional
        Representative point of every trial dof; enables a geometric
        fill-reducing ordering in the direct solver.
    """
    variant = Coupling(variant)
    layout = system.layout
    bdofs = layout.boundary_dofs
    if len(bdofs) != 2 * bem.n:
        raise ValueError("boundary of the mesh and BEM matrices disagree")
    check_compatibility(system, bem.boundary, phi0h)
    A_dpg, r_dpg = dpg_normal_block(system, beta)
    C, R = assemble_coupling(variant, bem, h12)
    zdata = np.concatenate([np.asarray(u0h, float), np.asarray(phi0h, float)])
    rhs = r_dpg.copy()
    rhs[bdofs] += R @ zdata
    rows = np.repeat(bdofs, len(bdofs))
    cols = np.tile(bdofs, len(bdofs))
    Cs = sp.csr_matrix((C.ravel(), (rows, cols)), shape=A_dpg.shape)
    A = (A_dpg + Cs).tocsr()
    if variant is Coupling.LS:
        asym = abs(A - A.T).max() if A.nnz else 0.0
        if asym > 1e-10 * max(abs(A).max(), 1e-300):
            raise RuntimeError("least-squares system is not symmetric")
    nT = layout.n_triangles
    blocks = np.column_stack([np.arange(nT), nT + np.arange(nT), 2 * nT + np.arange(nT)])
    return CoupledSystem(A, rhs, variant, float(beta), A_dpg, r_dpg, C, bdofs, blocks, dof_points)
