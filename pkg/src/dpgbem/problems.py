"""Benchmark transmission problems on the L-shaped domain.

Jump data follow ``u - u^c = u0`` and ``du/dn - du^c/dn = phi0`` on the
boundary, with ``n`` the outward normal of the interior domain.  Boundary
data callables take ``(points, normals)``.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class ProblemData:
    name: str
    f: Callable
    u0: Callable
    phi0: Callable
    exact_u: Optional[Callable] = None
    exact_sigma: Optional[Callable] = None
    exact_uc: Optional[Callable] = None
    domain: str = "lshape"


def problem_smooth():
    """u = (x^2 + y^2)/2, sigma = (x, y), f = -2, exterior field zero."""

    def u(p):
        return 0.5 * (p[:, 0] ** 2 + p[:, 1] ** 2)

    def sigma(p):
        return np.array(p, float, copy=True)

    def f(p):
        return np.full(len(p), -2.0)

    def u0(p, n):
        return u(p)

    def phi0(p, n):
        return (sigma(p) * n).sum(axis=1)

    return ProblemData("smooth", f, u0, phi0, u, sigma, lambda p: np.zeros(len(p)))


def polar_angle(p):
    """Angle in (-pi/2, pi] measured from the positive x-axis.

    The cut lies inside the removed quadrant, so the branch is continuous on
    the L-shape.  Points with angle in (-pi, -pi/2) only arise on the cut
    itself (e.g. signed zeros) and are mapped to the upper branch.
    """
    th = np.arctan2(p[:, 1], p[:, 0])
    return np.where(th < -0.5 * np.pi - 1e-12, th + 2 * np.pi, th)


def singular_u(p):
    r = np.hypot(p[:, 0], p[:, 1])
    return r ** (2.0 / 3.0) * np.cos(2.0 * polar_angle(p) / 3.0)


def singular_sigma(p):
    """Gradient of r^{2/3} cos(2 theta/3); NaN at the corner itself."""
    r = np.hypot(p[:, 0], p[:, 1])
    th = polar_angle(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (2.0 / 3.0) * r ** (-1.0 / 3.0)
        out = np.column_stack([c * np.cos(th / 3.0), c * np.sin(th / 3.0)])
    out[r == 0] = np.nan
    return out


def exterior_uc(p):
    """u^c = (x + y - 1/8) / (10 ((x - 1/8)^2 + y^2))."""
    X = p[:, 0] - 0.125
    y = p[:, 1]
    return 0.1 * (X + y) / (X**2 + y**2)


def exterior_uc_gradient(p):
    X = p[:, 0] - 0.125
    y = p[:, 1]
    R2 = X**2 + y**2
    return 0.1 * np.column_stack([y**2 - X**2 - 2 * X * y, X**2 - y**2 - 2 * X * y]) / R2[:, None] ** 2


def problem_singular():
    """Corner singularity r^{2/3} cos(2 theta/3), f = 0, dipole exterior field."""

    def f(p):
        return np.zeros(len(p))

    def u0(p, n):
        return singular_u(p) - exterior_uc(p)

    def phi0(p, n):
        return ((singular_sigma(p) - exterior_uc_gradient(p)) * n).sum(axis=1)

    return ProblemData("singular", f, u0, phi0, singular_u, singular_sigma, exterior_uc)


PROBLEMS = {"smooth": problem_smooth, "singular": problem_singular}


def get_problem(name):
    try:
        return PROBLEMS[name]()
    except KeyError:
        raise ValueError(f"unknown problem {name!r}") from None
