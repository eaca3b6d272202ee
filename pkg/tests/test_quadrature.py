import math

import numpy as np
import pytest

from dpgbem.quadrature import collapsed_triangle, gauss_segment


@pytest.mark.parametrize("n", [1, 3, 7, 16])
def test_gauss_segment_exact_to_degree(n):
    t, w = gauss_segment(n)
    assert np.all((t > 0) & (t < 1))
    for k in range(2 * n):
        assert w @ t**k == pytest.approx(1.0 / (k + 1), rel=1e-13)


@pytest.mark.parametrize("i,j", [(a, b) for a in range(9) for b in range(9) if a + b <= 8])
def test_collapsed_triangle_degree_eight(i, j):
    bary, w = collapsed_triangle(5)
    x, y = bary[:, 1], bary[:, 2]
    exact = math.factorial(i) * math.factorial(j) / math.factorial(i + j + 2)
    assert w @ (x**i * y**j) == pytest.approx(exact, rel=1e-12)


def test_collapsed_triangle_points_inside():
    bary, w = collapsed_triangle(5)
    assert np.all(bary > 0)
    np.testing.assert_allclose(bary.sum(axis=1), 1.0)
    assert w.sum() == pytest.approx(0.5)
