"""Quadrature rules on the reference segment and the reference triangle."""

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_segment(n=7):
    """Gauss-Legendre rule on [0, 1].

    Returns
    -------
    t : (n,) ndarray
        Nodes in (0, 1).
    w : (n,) ndarray
        Weights summing to 1.
    """
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def collapsed_triangle(n=5):
    """Conical product rule on the reference triangle (0,0), (1,0), (0,1).

    Built from ``n``-point Gauss rules through the Duffy map; exact for
    polynomials of total degree ``2n - 2`` (degree 8 for the default).

    Returns
    -------
    bary : (n*n, 3) ndarray
        Barycentric coordinates of the nodes.
    w : (n*n,) ndarray
        Weights summing to 1/2 (the reference area).
    """
    t, wt = gauss_segment(n)
    xi, eta = np.meshgrid(t, t, indexing="ij")
    wx, we = np.meshgrid(wt, wt, indexing="ij")
    x = xi.ravel()
    y = (eta * (1.0 - xi)).ravel()
    w = (wx * we * (1.0 - xi)).ravel()
    bary = np.column_stack([1.0 - x - y, x, y])
    return bary, w
