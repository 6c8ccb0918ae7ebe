from math import factorial

import numpy as np
import pytest

from dfsolve.quadrature import MAX_DEGREE, QuadratureError, edge_rule, triangle_rule


def _triangle_monomial(i, j):
    # int_T x^i y^j over the reference triangle
    return factorial(i) * factorial(j) / factorial(i + j + 2)


def test_degree1_is_centroid_rule():
    r = triangle_rule(1)
    assert len(r.weights) == 1
    assert r.weights[0] == pytest.approx(0.5)
    np.testing.assert_allclose(r.points[0], [1 / 3, 1 / 3])


def test_degree2_integrates_x2_plus_y2():
    r = triangle_rule(2)
    x, y = r.points.T
    assert np.sum(r.weights * (x**2 + y**2)) == pytest.approx(1 / 6, abs=1e-15)


def test_degree6_x3y2():
    r = triangle_rule(6)
    x, y = r.points.T
    assert abs(np.sum(r.weights * x**3 * y**2) - 1 / 420) < 1e-13


@pytest.mark.parametrize("degree", range(1, MAX_DEGREE + 1))
def test_triangle_exactness_positive_interior(degree):
    r = triangle_rule(degree)
    x, y = r.points.T
    assert abs(r.weights.sum() - 0.5) < 1e-14
    assert np.all(r.weights > 0)
    assert np.all(x > 0) and np.all(y > 0) and np.all(x + y < 1)
    for i in range(degree + 1):
        for j in range(degree + 1 - i):
            assert abs(np.sum(r.weights * x**i * y**j) - _triangle_monomial(i, j)) < 1e-12


@pytest.mark.parametrize("bad", [0, -1, MAX_DEGREE + 1])
def test_triangle_unsupported_degree(bad):
    with pytest.raises(QuadratureError):
        triangle_rule(bad)


def test_edge_midpoint():
    r = edge_rule(1)
    np.testing.assert_allclose(r.points[:, 0], [0.5])
    np.testing.assert_allclose(r.weights, [1.0])


@pytest.mark.parametrize("degree,npts,power,value", [(3, 2, 3, 1 / 4), (5, 3, 5, 1 / 6)])
def test_edge_gauss(degree, npts, power, value):
    r = edge_rule(degree)
    assert len(r.weights) == npts
    assert abs(np.sum(r.weights * r.points[:, 0] ** power) - value) < 1e-15


@pytest.mark.parametrize("degree", range(1, MAX_DEGREE + 1))
def test_edge_exactness(degree):
    r = edge_rule(degree)
    t = r.points[:, 0]
    assert abs(r.weights.sum() - 1) < 1e-14
    for p in range(degree + 1):
        assert abs(np.sum(r.weights * t**p) - 1 / (p + 1)) < 1e-13
