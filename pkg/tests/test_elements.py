import math

import numpy as np
import pytest
import sympy

from app.assembly import MAX_QUADRATURE_DEGREE, reference_quadrature
from app.elements import (
    MONOMIALS,
    p1_element,
    p2_element,
    reference_derivatives,
    rt_element,
    rt_functionals,
)
from app.errors import QuadratureError

x, y = sympy.symbols("x y")


def _symbolic(element, index):
    return [
        sum(sympy.Float(float(c)) * x**a * y**b for c, (a, b) in zip(element.coefficients[index, component], MONOMIALS))
        for component in range(element.value_size)
    ]


@pytest.mark.parametrize("degree", [0, 1, 2, 5, 8, 12, MAX_QUADRATURE_DEGREE])
def test_quadrature_exactness(degree):
    rule = reference_quadrature(degree)
    assert rule.weights.sum() == pytest.approx(0.5, rel=1e-14)
    assert np.all(rule.weights > 0)
    px, py = rule.points[:, 0], rule.points[:, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)
            assert rule.weights @ (px**a * py**b) == pytest.approx(exact, rel=1e-12, abs=1e-16)


@pytest.mark.parametrize("degree", [-1, MAX_QUADRATURE_DEGREE + 1])
def test_quadrature_range(degree):
    with pytest.raises(QuadratureError):
        reference_quadrature(degree)


def test_element_sizes():
    assert p2_element().ndofs == 6
    assert rt_element().ndofs == 8
    assert p1_element().ndofs == 3
    assert rt_element().value_size == 2


def test_p2_nodal_basis():
    nodes = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0.5], [0, 0.5], [0.5, 0]], dtype=float)
    values = p2_element().tabulate(nodes)[:, :, 0]
    np.testing.assert_allclose(values, np.eye(6), atol=1e-14)


def test_p1_nodal_basis():
    nodes = np.array([[0, 0], [1, 0], [0, 1]], dtype=float)
    np.testing.assert_allclose(p1_element().tabulate(nodes)[:, :, 0], np.eye(3), atol=1e-14)


def test_rt_basis_is_dual_to_its_functionals():
    element = rt_element()
    gram = np.array(
        [[float(value) for value in rt_functionals(_symbolic(element, j))] for j in range(8)]
    ).T
    np.testing.assert_allclose(gram, np.eye(8), atol=1e-12)


def test_gradients_match_symbolic_derivatives(rng):
    points = rng.random((7, 2)) * 0.5
    element = p2_element()
    gradients = element.tabulate_gradient(points)
    for j in range(element.ndofs):
        (phi,) = _symbolic(element, j)
        dx = sympy.lambdify((x, y), sympy.diff(phi, x))
        dy = sympy.lambdify((x, y), sympy.diff(phi, y))
        np.testing.assert_allclose(gradients[:, j, 0, 0], dx(points[:, 0], points[:, 1]), atol=1e-12)
        np.testing.assert_allclose(gradients[:, j, 0, 1], dy(points[:, 0], points[:, 1]), atol=1e-12)


def test_reference_derivatives_compose_to_zero():
    d0, d1 = reference_derivatives()
    assert d0.shape == (8, 6)
    assert d1.shape == (3, 8)
    assert np.abs(d1 @ d0).max() <= 1e-14


def test_reference_derivative_of_constant_vanishes():
    d0, _ = reference_derivatives()
    np.testing.assert_allclose(d0 @ np.ones(6), 0.0, atol=1e-14)
