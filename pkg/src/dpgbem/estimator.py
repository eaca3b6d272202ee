"""Computable error bound and adaptive indicators for the coupled method."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .bem import eval_tangential_residual
from .dpg import energy_residual
from .spaces import boundary_traces


@dataclass(frozen=True)
class EstimatorBreakdown:
    """Estimator terms; ``total`` is their sum.

    ``dpg_squares`` holds per-triangle residual squares, ``weighted_squares``
    per-boundary-segment squares (loop order).
    """

    term_dpg: float
    term_proj: float
    term_weighted: float
    dpg_squares: np.ndarray
    weighted_squares: np.ndarray

    @property
    def total(self):
        return self.term_dpg + self.term_proj + self.term_weighted


def estimate(system, bem, h12, x, u0h, phi0h):
    """Evaluate the three estimator terms for the trial vector ``x``.

    Parameters
    ----------
    system : UltraWeakSystem
    bem : BemMatrices
    h12 : H12Product
        Product used for the projected boundary residual.
    x : ndarray
        Trial coefficients.
    u0h, phi0h : ndarray
        Discrete jump data (S1 and P0 boundary coefficients).
    """
    dpg, sq = energy_residual(system, x, per_element=True)
    uG, sG = boundary_traces(system.layout, x)
    v = np.asarray(u0h) - uG
    psi = np.asarray(phi0h) - sG
    r = bem.vgamma_moments(v, psi, "S1")
    y = sla.cho_solve(bem.mass_factor(), r)
    proj = float(np.sqrt(max(y @ h12.P @ y, 0.0)))
    wt = eval_tangential_residual(bem.boundary, uG, sG, u0h, phi0h)
    return EstimatorBreakdown(dpg, proj, float(np.sqrt((wt**2).sum())), sq, wt**2)


def adaptive_indicators(breakdown, mesh):
    """Per-triangle squared indicators: DPG residual plus owned boundary terms.

    The projected term is global and does not enter.
    """
    ind = np.array(breakdown.dpg_squares, float, copy=True)
    loop = mesh.boundary_loop()
    owner = mesh.edge_tris[loop, 0]
    np.add.at(ind, owner, breakdown.weighted_squares)
    return ind
