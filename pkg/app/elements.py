"""Reference elements of the quadratic de Rham complex on the unit triangle.

Shape functions are derived exactly with sympy (rational coefficients over the
monomials of degree <= 2) and frozen as float coefficient tables. The
reference triangle has vertices (0, 0), (1, 0), (0, 1); local edge ``i`` is
opposite vertex ``i``.
"""

from functools import lru_cache
from typing import List, Tuple

import numpy as np
import sympy
from pydantic import BaseModel, Field

x, y = sympy.symbols("x y")

# (a, b) exponents of x**a * y**b
MONOMIALS: List[Tuple[int, int]] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]

REFERENCE_VERTICES = [
    (sympy.Integer(0), sympy.Integer(0)),
    (sympy.Integer(1), sympy.Integer(0)),
    (sympy.Integer(0), sympy.Integer(1)),
]
EDGE_ENDPOINTS = [(1, 2), (2, 0), (0, 1)]


class ReferenceElement(BaseModel):
    name: str
    form_degree: int
    polynomial_degree: int
    value_size: int = Field(description="1 for scalar proxies, 2 for vector proxies")
    coefficients: np.ndarray = Field(
        description="Monomial coefficients, shape (ndofs, value_size, len(MONOMIALS))"
    )

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @property
    def ndofs(self) -> int:
        return self.coefficients.shape[0]

    def tabulate(self, points: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape (P, ndofs, value_size)."""
        monomials = _monomial_values(points)
        return np.einsum("bcm,pm->pbc", self.coefficients, monomials)

    def tabulate_gradient(self, points: np.ndarray) -> np.ndarray:
        """Basis gradients, shape (P, ndofs, value_size, 2)."""
        gradients = _monomial_gradients(points)
        return np.einsum("bcm,pmd->pbcd", self.coefficients, gradients)


def _monomial_values(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    px, py = points[:, 0], points[:, 1]
    return np.stack([px**a * py**b for a, b in MONOMIALS], axis=1)


def _monomial_gradients(points: np.ndarray) -> np.ndarray:
    points = np.atleast_2d(points)
    px, py = points[:, 0], points[:, 1]
    columns = []
    for a, b in MONOMIALS:
        dx = a * px ** max(a - 1, 0) * py**b if a else np.zeros_like(px)
        dy = b * px**a * py ** max(b - 1, 0) if b else np.zeros_like(px)
        columns.append(np.stack([dx, dy], axis=1))
    return np.stack(columns, axis=1)


def _coefficient_row(expr) -> List[float]:
    terms = sympy.Poly(sympy.expand(expr), x, y).as_dict()
    return [float(terms.get(exponent, 0)) for exponent in MONOMIALS]


def _freeze(name: str, form_degree: int, degree: int, basis) -> ReferenceElement:
    """basis: list of tuples of sympy expressions (one per component)."""
    table = np.array([[_coefficient_row(c) for c in function] for function in basis])
    return ReferenceElement(
        name=name,
        form_degree=form_degree,
        polynomial_degree=degree,
        value_size=table.shape[1],
        coefficients=table,
    )


def _barycentric():
    return [1 - x - y, x, y]


def _p2_basis():
    lam = _barycentric()
    vertex = [lam[i] * (2 * lam[i] - 1) for i in range(3)]
    edge = [4 * lam[a] * lam[b] for a, b in EDGE_ENDPOINTS]
    return vertex + edge


def _rt_monomials():
    return [
        (sympy.Integer(1), sympy.Integer(0)),
        (x, sympy.Integer(0)),
        (y, sympy.Integer(0)),
        (sympy.Integer(0), sympy.Integer(1)),
        (sympy.Integer(0), x),
        (sympy.Integer(0), y),
        (x**2, x * y),
        (x * y, y**2),
    ]


def rt_functionals(field) -> List[sympy.Expr]:
    """Degrees of freedom of the Raviart-Thomas element applied to a vector field.

    Two normal-flux moments per edge against ``1 - s`` and ``s`` along the
    edge parametrisation ``a + s (b - a)``, with the outward rotation of the
    tangent, followed by the two interior moments of the components.
    """
    s = sympy.Symbol("s")
    values = []
    for a, b in EDGE_ENDPOINTS:
        (ax, ay), (bx, by) = REFERENCE_VERTICES[a], REFERENCE_VERTICES[b]
        tx, ty = bx - ax, by - ay
        substitution = {x: ax + s * tx, y: ay + s * ty}
        flux = field[0].subs(substitution) * ty - field[1].subs(substitution) * tx
        for weight in (1 - s, s):
            values.append(sympy.integrate(sympy.expand(flux * weight), (s, 0, 1)))
    for component in field:
        values.append(
            sympy.integrate(sympy.integrate(component, (y, 0, 1 - x)), (x, 0, 1))
        )
    return values


def _rt_basis():
    monomials = _rt_monomials()
    vandermonde = sympy.Matrix([rt_functionals(m) for m in monomials]).T
    inverse = vandermonde.inv()
    basis = []
    for j in range(len(monomials)):
        first = sum(inverse[m, j] * monomials[m][0] for m in range(len(monomials)))
        second = sum(inverse[m, j] * monomials[m][1] for m in range(len(monomials)))
        basis.append((sympy.expand(first), sympy.expand(second)))
    return basis


@lru_cache(maxsize=None)
def _symbolic_bases():
    return {
        "P2": _p2_basis(),
        "RT": _rt_basis(),
        "P1": _barycentric(),
    }


@lru_cache(maxsize=None)
def p2_element() -> ReferenceElement:
    return _freeze("P2", 0, 2, [(phi,) for phi in _symbolic_bases()["P2"]])


@lru_cache(maxsize=None)
def rt_element() -> ReferenceElement:
    return _freeze("RT", 1, 2, _symbolic_bases()["RT"])


@lru_cache(maxsize=None)
def p1_element() -> ReferenceElement:
    return _freeze("P1", 2, 1, [(phi,) for phi in _symbolic_bases()["P1"]])


@lru_cache(maxsize=None)
def reference_derivatives() -> Tuple[np.ndarray, np.ndarray]:
    """Local d matrices in reference coordinates.

    ``D0[s, j]`` is RT functional ``s`` applied to curl of P2 basis ``j``;
    ``D1[i, s]`` is the divergence of RT basis ``s`` at reference vertex ``i``.
    Physical local matrices differ only by the edge signs.
    """
    bases = _symbolic_bases()
    d0 = sympy.Matrix(
        [rt_functionals((sympy.diff(phi, y), -sympy.diff(phi, x))) for phi in bases["P2"]]
    ).T
    d1 = sympy.Matrix(
        [
            [
                (sympy.diff(psi[0], x) + sympy.diff(psi[1], y)).subs({x: vx, y: vy})
                for psi in bases["RT"]
            ]
            for vx, vy in REFERENCE_VERTICES
        ]
    )
    return np.array(d0.tolist(), dtype=float), np.array(d1.tolist(), dtype=float)
