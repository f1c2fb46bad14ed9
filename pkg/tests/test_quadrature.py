from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wmplab.quadrature import SUPPORTED_DEGREES, monomial_integral, quadrature, rule_for


def _apply(rule, a, b, c):
    x = rule.cartesian()
    return float(rule.weights @ (x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c))


@pytest.mark.parametrize("degree", SUPPORTED_DEGREES)
def test_exact_for_all_monomials_up_to_degree(degree):
    rule = quadrature(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                assert abs(_apply(rule, a, b, c) - monomial_integral(a, b, c)) <= 1e-14


@pytest.mark.parametrize("degree", SUPPORTED_DEGREES)
def test_positive_weights_and_interior_points(degree):
    rule = quadrature(degree)
    assert (rule.weights > 0).all()
    assert math.isclose(rule.weights.sum(), 1 / 6, rel_tol=0, abs_tol=1e-15)
    assert np.allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
    assert (rule.points > 0).all()


def test_factorial_formula_examples():
    assert monomial_integral(0, 0, 0) == pytest.approx(1 / 6, abs=1e-16)
    assert monomial_integral(2, 0, 0) == pytest.approx(1 / 60, abs=1e-16)
    assert monomial_integral(2, 2, 0) == pytest.approx(4 / 5040, abs=1e-16)
    assert _apply(quadrature(1), 0, 0, 0) == pytest.approx(1 / 6, abs=1e-15)
    assert _apply(quadrature(2), 2, 0, 0) == pytest.approx(1 / 60, abs=1e-15)
    assert _apply(quadrature(4), 2, 2, 0) == pytest.approx(4 / 5040, abs=1e-15)


def test_rules_are_symmetric_under_vertex_permutation():
    for d in SUPPORTED_DEGREES:
        r = quadrature(d)
        for perm in ([1, 0, 2, 3], [3, 2, 1, 0], [0, 2, 3, 1]):
            key = lambda p, w: sorted(zip(np.round(p, 12).tolist(), np.round(w, 14).tolist()))
            assert key(r.points[:, perm], r.weights) == key(r.points, r.weights)


def test_unsupported_degree_rejected():
    with pytest.raises(ValueError):
        quadrature(3)
    with pytest.raises(ValueError):
        rule_for(9)


def test_rule_for_picks_smallest_exact_rule():
    assert rule_for(0).degree == 1
    assert rule_for(3).degree == 5
    assert rule_for(6).degree == 6


def _monomial_integral_brute(a, b, c):
    # independent route: iterated 1-D Gauss-Legendre (Duffy collapse) on the reference tet
    g, w = np.polynomial.legendre.leggauss(12)
    t, w = 0.5 * (g + 1), 0.5 * w
    total = 0.0
    for u, wu in zip(t, w):
        for v, wv in zip(t, w):
            for s, ws in zip(t, w):
                x = u
                y = (1 - u) * v
                z = (1 - u) * (1 - v) * s
                jac = (1 - u) ** 2 * (1 - v)
                total += wu * wv * ws * jac * x ** a * y ** b * z ** c
    return total


@given(st.integers(0, 4), st.integers(0, 4), st.integers(0, 4))
def test_factorial_formula_matches_collapsed_gauss(a, b, c):
    assert monomial_integral(a, b, c) == pytest.approx(_monomial_integral_brute(a, b, c), rel=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=10, max_size=10))
def test_degree_two_polynomials_integrated_exactly(coef):
    # random quadratic in x, y, z integrated by every rule against the exact formula
    mons = [(a, b, c) for a in range(3) for b in range(3 - a) for c in range(3 - a - b)]
    exact = sum(k * monomial_integral(*m) for k, m in zip(coef, mons))
    for d in (2, 4, 6):
        r = quadrature(d)
        got = sum(k * _apply(r, *m) for k, m in zip(coef, mons))
        assert got == pytest.approx(exact, abs=1e-14)
