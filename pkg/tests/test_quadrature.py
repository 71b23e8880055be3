from math import factorial

import numpy as np
import pytest

from src.quadrature import edge_rule, gauss_interval, matrix_degree, triangle_rule


def _monomial_integral(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [0, 1, 4, 7, 12])
def test_triangle_rule_exact_up_to_degree(degree):
    rule = triangle_rule(degree)
    assert rule.degree >= degree
    x, y = rule.points[:, 0], rule.points[:, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            approx = np.sum(rule.weights * x ** a * y ** b)
            assert approx == pytest.approx(_monomial_integral(a, b), rel=1e-12, abs=1e-15)


def test_triangle_points_inside_reference_element():
    rule = triangle_rule(9)
    x, y = rule.points[:, 0], rule.points[:, 1]
    assert np.all(x > 0) and np.all(y > 0) and np.all(x + y < 1)
    assert np.all(rule.weights > 0)


def test_edge_and_interval_rules():
    rule = edge_rule(5)
    assert rule.points.shape[1] == 1
    s = rule.points[:, 0]
    assert np.sum(rule.weights * s ** 5) == pytest.approx(1.0 / 6.0)
    s, w = gauss_interval(3)
    assert np.sum(w) == pytest.approx(1.0)
    assert np.sum(w * s ** 4) == pytest.approx(0.2)


def test_invalid_rules_rejected():
    with pytest.raises(ValueError):
        gauss_interval(0)
    with pytest.raises(ValueError):
        triangle_rule(-1)


def test_matrix_degree_covers_transport_weight():
    assert matrix_degree(1) == 5
    assert matrix_degree(4) == 11
