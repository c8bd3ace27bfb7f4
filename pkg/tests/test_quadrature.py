from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rfem.quadrature import MAX_DEGREE, edge_rule, tri_rule


def monomial_integral(m, n):
    """Exact integral of x^m y^n over the reference triangle."""
    return factorial(m) * factorial(n) / factorial(m + n + 2)


def test_centroid_rule():
    rule = tri_rule(1)
    assert len(rule) == 1
    np.testing.assert_allclose(rule.points[0], [1 / 3, 1 / 3])
    assert rule.weights[0] == pytest.approx(0.5)


def test_linear_and_quintic_examples():
    r2 = tri_rule(2)
    assert np.sum(r2.weights * r2.points.sum(axis=1)) == pytest.approx(1 / 3, rel=1e-14)
    r5 = tri_rule(5)
    x, y = r5.points.T
    # 2! 3! / 7! = 1/420
    assert np.sum(r5.weights * x**2 * y**3) == pytest.approx(1 / 420, rel=1e-13)


@pytest.mark.parametrize("degree", range(1, MAX_DEGREE + 1))
def test_triangle_monomial_sweep(degree):
    rule = tri_rule(degree)
    assert rule.exact_degree >= degree
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    x, y = rule.points.T
    for m in range(degree + 1):
        for n in range(degree + 1 - m):
            exact = monomial_integral(m, n)
            assert abs(np.sum(rule.weights * x**m * y**n) - exact) < 1e-13 * exact


@pytest.mark.parametrize("degree", range(1, MAX_DEGREE + 1))
def test_edge_monomial_sweep(degree):
    rule = edge_rule(degree)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(1.0, rel=1e-14)
    t = rule.points
    for k in range(degree + 1):
        assert np.sum(rule.weights * t**k) == pytest.approx(1 / (k + 1), rel=1e-13)


def test_edge_examples():
    mid = edge_rule(1)
    np.testing.assert_allclose(mid.points, [0.5])
    np.testing.assert_allclose(mid.weights, [1.0])
    r = edge_rule(5)
    assert np.sum(r.weights * r.points**5) == pytest.approx(1 / 6, rel=1e-14)


@pytest.mark.parametrize("bad", [0, -1, MAX_DEGREE + 1])
def test_degree_out_of_range(bad):
    with pytest.raises(ValueError):
        tri_rule(bad)
    with pytest.raises(ValueError):
        edge_rule(bad)


@given(st.lists(st.floats(-3, 3), min_size=10, max_size=10), st.integers(1, 3))
def test_random_polynomial_exactness(coeffs, deg):
    # cubic polynomials in (x, y) integrated by the matching rule
    terms = [(m, n) for m in range(4) for n in range(4 - m)]
    terms = [(m, n) for (m, n) in terms if m + n <= deg]
    c = np.array(coeffs[: len(terms)])
    rule = tri_rule(deg)
    x, y = rule.points.T
    approx = sum(ci * np.sum(rule.weights * x**m * y**n) for ci, (m, n) in zip(c, terms))
    exact = sum(ci * monomial_integral(m, n) for ci, (m, n) in zip(c, terms))
    assert approx == pytest.approx(exact, abs=1e-13 * (1 + np.abs(c).sum()))
