"""Finite element spaces of the quadratic de Rham complex.

    P2 (0-forms, scalar) --curl--> RT (1-forms, vector) --div--> P1dc (2-forms)

0-forms use the rotated proxy ``curl q = (dq/dy, -dq/dx)``. RT functions are
mapped with the contravariant Piola transform and 2-forms with the density
scaling ``1 / det J``, so that the derivative of a mapped basis function is
the mapped reference derivative.
"""

from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field, PrivateAttr, model_validator

from app.elements import ReferenceElement, p1_element, p2_element, rt_element
from app.errors import SpaceError
from app.mesh import SimplicialMesh, locate

logger = structlog.get_logger(__name__)

EDGE_GAUSS_POINTS = 6


class FormFamily(str, Enum):
    P2 = "P2Λ0"
    RT = "P2-Λ1"
    P1DC = "P1Λ2"


FAMILY_DEGREE = {FormFamily.P2: 0, FormFamily.RT: 1, FormFamily.P1DC: 2}
FAMILY_BY_DEGREE = {degree: family for family, degree in FAMILY_DEGREE.items()}

# Proxy names of d on each form degree.
DERIVATIVE_NAMES = {0: "curl", 1: "div"}


class FeSpace(BaseModel):
    mesh: SimplicialMesh
    form_degree: int
    family: FormFamily
    essential: bool = Field(
        description="Eliminate boundary-trace DOFs (homogeneous trace)"
    )
    ndofs: int
    cell_dofs: np.ndarray = Field(description="Global DOF of each local slot, shape (T, nloc)")
    cell_signs: np.ndarray = Field(description="Orientation sign of each local slot")
    boundary_mask: np.ndarray = Field(description="DOFs carrying a boundary trace")
    free_dofs: np.ndarray = Field(description="Global indices of the unknowns")

    _cache: dict = PrivateAttr(default_factory=dict)

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @property
    def nfree(self) -> int:
        return len(self.free_dofs)

    @property
    def element(self) -> ReferenceElement:
        return {
            FormFamily.P2: p2_element,
            FormFamily.RT: rt_element,
            FormFamily.P1DC: p1_element,
        }[self.family]()

    @property
    def polynomial_degree(self) -> int:
        return self.element.polynomial_degree

    @property
    def value_size(self) -> int:
        return self.element.value_size

    @property
    def has_derivative(self) -> bool:
        return self.form_degree < 2

    def extend(self, coefficients: np.ndarray) -> np.ndarray:
        """Free coefficients to a full vector with zero boundary values."""
        full = np.zeros(self.ndofs)
        full[self.free_dofs] = coefficients
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free_dofs]

    def free_index(self) -> np.ndarray:
        """Map from global DOF to position among the free DOFs, -1 if eliminated."""
        index = np.full(self.ndofs, -1, dtype=np.int64)
        index[self.free_dofs] = np.arange(self.nfree)
        return index

    def map_values(
        self,
        reference: np.ndarray,
        cells: np.ndarray,
    ) -> np.ndarray:
        """Push reference basis values forward to the cells.

        ``reference`` has shape (C or 1, Q, nloc, value_size) and ``cells`` the
        C cell indices; returns (C, Q, nloc, value_size).
        """
        mesh = self.mesh
        signs = self.cell_signs[cells][:, None, :, None]
        if self.family is FormFamily.P2:
            return np.broadcast_to(reference, (len(cells),) + reference.shape[1:]) * signs
        det = mesh.determinants[cells][:, None, None, None]
        if self.family is FormFamily.RT:
            mapped = np.einsum("cab,cqlb->cqla", mesh.jacobians[cells], reference)
            return mapped / det * signs
        return reference / det * signs

    def map_derivatives(self, reference_gradients: np.ndarray, cells: np.ndarray) -> np.ndarray:
        """Push forward d of the basis: curl for 0-forms, div for 1-forms."""
        mesh = self.mesh
        signs = self.cell_signs[cells][:, None, :, None]
        det = mesh.determinants[cells][:, None, None, None]
        if self.family is FormFamily.P2:
            grad = reference_gradients[..., 0, :]
            reference_curl = np.stack([grad[..., 1], -grad[..., 0]], axis=-1)
            mapped = np.einsum("cab,cqlb->cqla", mesh.jacobians[cells], reference_curl)
            return mapped / det * signs
        if self.family is FormFamily.RT:
            divergence = reference_gradients[..., 0, 0] + reference_gradients[..., 1, 1]
            return divergence[..., None] / det * signs
        raise SpaceError("2-forms have no exterior derivative on a 2D domain")

    def tabulate(self, points: np.ndarray) -> np.ndarray:
        """Physical basis values at reference points on every cell, (T, Q, nloc, value_size)."""
        key = ("values", points.tobytes())
        if key not in self._cache:
            cells = np.arange(self.mesh.num_triangles)
            self._cache[key] = self.map_values(self.element.tabulate(points)[None], cells)
        return self._cache[key]

    def tabulate_derivative(self, points: np.ndarray) -> np.ndarray:
        key = ("derivatives", points.tobytes())
        if key not in self._cache:
            cells = np.arange(self.mesh.num_triangles)
            gradients = self.element.tabulate_gradient(points)[None]
            self._cache[key] = self.map_derivatives(gradients, cells)
        return self._cache[key]

    def physical_points(self, points: np.ndarray) -> np.ndarray:
        """Images of reference points on every cell, (T, Q, 2)."""
        origins = self.mesh.vertices[self.mesh.triangles[:, 0]]
        return origins[:, None, :] + np.einsum("tab,qb->tqa", self.mesh.jacobians, points)

    def __str__(self) -> str:
        return (
            f"FeSpace({self.family.value}, k={self.form_degree}, "
            f"ndofs={self.ndofs}, free={self.nfree})"
        )


class FormFunction(BaseModel):
    space: FeSpace
    coefficients: np.ndarray

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def check_length(self):
        if self.coefficients.shape != (self.space.nfree,):
            raise SpaceError(
                f"coefficient vector of shape {self.coefficients.shape} "
                f"does not match {self.space.nfree} free DOFs"
            )
        return self

    @classmethod
    def zeros(cls, space: FeSpace) -> "FormFunction":
        return cls(space=space, coefficients=np.zeros(space.nfree))

    def full_coefficients(self) -> np.ndarray:
        return self.space.extend(self.coefficients)

    def __add__(self, other: "FormFunction") -> "FormFunction":
        return FormFunction(space=self.space, coefficients=self.coefficients + other.coefficients)

    def __sub__(self, other: "FormFunction") -> "FormFunction":
        return FormFunction(space=self.space, coefficients=self.coefficients - other.coefficients)


def build_space(
    mesh: SimplicialMesh,
    k: int,
    family: FormFamily,
    essential: bool = True,
) -> FeSpace:
    family = FormFamily(family)
    if FAMILY_DEGREE[family] != k:
        raise SpaceError(f"family {family.value} does not carry {k}-forms")

    num_v, num_e, num_t = mesh.num_vertices, mesh.num_edges, mesh.num_triangles
    if family is FormFamily.P2:
        ndofs = num_v + num_e
        cell_dofs = np.hstack([mesh.triangles, num_v + mesh.triangle_edges])
        cell_signs = np.ones_like(cell_dofs)
        boundary = np.concatenate([mesh.boundary_vertices, mesh.boundary_edges])
    elif family is FormFamily.RT:
        ndofs = 2 * num_e + 2 * num_t
        forward = mesh.triangle_edge_signs > 0
        first = np.where(forward, 2 * mesh.triangle_edges, 2 * mesh.triangle_edges + 1)
        second = np.where(forward, 2 * mesh.triangle_edges + 1, 2 * mesh.triangle_edges)
        edge_dofs = np.stack([first, second], axis=2).reshape(num_t, 6)
        edge_signs = np.repeat(mesh.triangle_edge_signs, 2, axis=1)
        interior = 2 * num_e + 2 * np.arange(num_t)[:, None] + np.arange(2)[None, :]
        cell_dofs = np.hstack([edge_dofs, interior])
        cell_signs = np.hstack([edge_signs, np.ones((num_t, 2), dtype=np.int64)])
        boundary = np.concatenate([np.repeat(mesh.boundary_edges, 2), np.zeros(2 * num_t, dtype=bool)])
    else:
        ndofs = 3 * num_t
        cell_dofs = np.arange(ndofs).reshape(num_t, 3)
        cell_signs = np.ones_like(cell_dofs)
        boundary = np.zeros(ndofs, dtype=bool)

    free = np.flatnonzero(~boundary) if essential else np.arange(ndofs)
    space = FeSpace(
        mesh=mesh,
        form_degree=k,
        family=family,
        essential=essential,
        ndofs=ndofs,
        cell_dofs=cell_dofs,
        cell_signs=cell_signs.astype(float),
        boundary_mask=boundary,
        free_dofs=free,
    )
    logger.debug("space built", space=str(space))
    return space


def interpolate(space: FeSpace, f: Callable[[np.ndarray], np.ndarray]) -> FormFunction:
    """Canonical interpolation through the DOF functionals.

    ``f`` maps points of shape (..., 2) to values of shape (...) for scalar
    proxies or (..., 2) for vector proxies. For 2-forms the value is the
    proxy density; the stored DOFs are ``det J`` times the vertex values.
    """
    mesh = space.mesh
    if space.family is FormFamily.P2:
        midpoints = mesh.vertices[mesh.edges].mean(axis=1)
        nodes = np.vstack([mesh.vertices, midpoints])
        full = np.asarray(f(nodes), dtype=float).reshape(-1)
    elif space.family is FormFamily.P1DC:
        values = np.asarray(f(mesh.vertices[mesh.triangles]), dtype=float)
        full = (values * mesh.determinants[:, None]).reshape(-1)
    else:
        full = _interpolate_rt(space, f)
    if full.shape != (space.ndofs,):
        raise SpaceError(f"interpolated field has shape {full.shape}, expected ({space.ndofs},)")
    return FormFunction(space=space, coefficients=space.restrict(full))


def _interpolate_rt(space: FeSpace, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    # assembly imports this module
    from app.assembly import reference_quadrature

    mesh = space.mesh
    corners = mesh.vertices[mesh.triangles]
    local_values = np.empty((mesh.num_triangles, 8))

    nodes, weights = np.polynomial.legendre.leggauss(EDGE_GAUSS_POINTS)
    s = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    for i, (a, b) in enumerate([(1, 2), (2, 0), (0, 1)]):
        start, tangent = corners[:, a], corners[:, b] - corners[:, a]
        points = start[:, None, :] + s[None, :, None] * tangent[:, None, :]
        values = np.asarray(f(points), dtype=float)
        flux = values[..., 0] * tangent[:, None, 1] - values[..., 1] * tangent[:, None, 0]
        local_values[:, 2 * i] = flux @ (weights * (1.0 - s))
        local_values[:, 2 * i + 1] = flux @ (weights * s)

    quad = reference_quadrature(8)
    values = np.asarray(f(space.physical_points(quad.points)), dtype=float)
    pulled = np.einsum("tab,tqb->tqa", mesh.inverse_jacobians, values)
    pulled *= mesh.determinants[:, None, None]
    local_values[:, 6:] = np.einsum("tqa,q->ta", pulled, quad.weights)

    full = np.zeros(space.ndofs)
    full[space.cell_dofs.ravel()] = (local_values * space.cell_signs).ravel()
    return full


def _point_basis(space: FeSpace, points: np.ndarray, derivative: bool) -> Tuple[np.ndarray, np.ndarray]:
    cells, reference = locate(space.mesh, points)
    if derivative:
        local = space.element.tabulate_gradient(reference)[:, None]
        mapped = space.map_derivatives(local, cells)
    else:
        local = space.element.tabulate(reference)[:, None]
        mapped = space.map_values(local, cells)
    return cells, mapped[:, 0]


def evaluate(fn: FormFunction, points: np.ndarray) -> np.ndarray:
    """Point values: shape (P,) for scalar proxies, (P, 2) for vector proxies."""
    space = fn.space
    cells, basis = _point_basis(space, points, derivative=False)
    local = fn.full_coefficients()[space.cell_dofs[cells]]
    values = np.einsum("plc,pl->pc", basis, local)
    return values[:, 0] if space.value_size == 1 else values


def evaluate_derivative(fn: FormFunction, points: np.ndarray) -> np.ndarray:
    """Point values of d(fn): (P, 2) for 0-forms, (P,) for 1-forms."""
    space = fn.space
    if not space.has_derivative:
        raise SpaceError("2-forms have no exterior derivative on a 2D domain")
    cells, basis = _point_basis(space, points, derivative=True)
    local = fn.full_coefficients()[space.cell_dofs[cells]]
    values = np.einsum("plc,pl->pc", basis, local)
    return values[:, 0] if space.form_degree == 1 else values


def space_for_degree(mesh: SimplicialMesh, k: int, essential: bool = True) -> Optional[FeSpace]:
    if k not in FAMILY_BY_DEGREE:
        return None
    return build_space(mesh, k, FAMILY_BY_DEGREE[k], essential=essential)
