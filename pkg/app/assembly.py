"""Quadrature and sparse assembly of mass matrices, derivative matrices and loads.

Every global accumulation runs over triangles in ascending index order, so
assembled operators are bit-reproducible.
"""

from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import sparse
from scipy.special import roots_jacobi, roots_legendre

from app.elements import reference_derivatives
from app.errors import AssemblyError, QuadratureError
from app.fespace import FeSpace, FormFamily

logger = structlog.get_logger(__name__)

MAX_QUADRATURE_DEGREE = 30


class Symmetry(str, Enum):
    SPD = "spd"
    SKEW = "skew"
    GENERAL = "general"


class QuadratureRule(BaseModel):
    points: np.ndarray = Field(description="Reference-triangle points, shape (Q, 2)")
    weights: np.ndarray = Field(description="Weights summing to 1/2")
    degree: int = Field(description="Polynomial exactness degree")

    class Config:
        arbitrary_types_allowed = True
        frozen = True


class SparseOperator(BaseModel):
    matrix: sparse.csr_matrix
    symmetry: Symmetry = Symmetry.GENERAL

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def transpose(self) -> "SparseOperator":
        return SparseOperator(matrix=self.matrix.T.tocsr(), symmetry=self.symmetry)

    def __matmul__(self, other):
        return self.matrix @ other


@lru_cache(maxsize=None)
def _collapsed_rule(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    # Duffy collapse of the square onto the triangle: x = u, y = v (1 - u).
    m = max(1, (degree + 2) // 2)
    t, wj = roots_jacobi(m, 1.0, 0.0)
    s, wl = roots_legendre(m)
    u = 0.5 * (1.0 + t)
    v = 0.5 * (1.0 + s)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    points = np.column_stack([uu.ravel(), (vv * (1.0 - uu)).ravel()])
    weights = np.outer(0.25 * wj, 0.5 * wl).ravel()
    return points, weights


def reference_quadrature(degree: int) -> QuadratureRule:
    """Conical Gauss-Jacobi x Gauss-Legendre rule exact to ``degree``."""
    if degree < 0 or degree > MAX_QUADRATURE_DEGREE:
        raise QuadratureError(
            f"quadrature degree {degree} outside tabulated range 0..{MAX_QUADRATURE_DEGREE}"
        )
    points, weights = _collapsed_rule(int(degree))
    return QuadratureRule(points=points.copy(), weights=weights.copy(), degree=int(degree))


def _to_csr(rows, cols, vals, shape) -> sparse.csr_matrix:
    """Sum duplicate entries in order of appearance, then compress."""
    linear = rows.ravel().astype(np.int64) * shape[1] + cols.ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    order = np.argsort(linear, kind="stable")
    linear, vals = linear[order], vals[order]
    if len(linear) == 0:
        return sparse.csr_matrix(shape)
    starts = np.flatnonzero(np.r_[True, linear[1:] != linear[:-1]])
    summed = np.add.reduceat(vals, starts)
    keys = linear[starts]
    return sparse.csr_matrix((summed, (keys // shape[1], keys % shape[1])), shape=shape)


def _restrict(matrix: sparse.csr_matrix, row_space: FeSpace, col_space: FeSpace) -> sparse.csr_matrix:
    return matrix[row_space.free_dofs][:, col_space.free_dofs].tocsr()


def _detj_weights(space: FeSpace, quad: QuadratureRule) -> np.ndarray:
    return space.mesh.determinants[:, None] * quad.weights[None, :]


def mass_matrix(space: FeSpace, quad: QuadratureRule) -> SparseOperator:
    if quad.degree < 2 * space.polynomial_degree:
        raise AssemblyError(
            f"quadrature degree {quad.degree} cannot integrate the "
            f"{space.family.value} mass matrix exactly"
        )
    basis = space.tabulate(quad.points)
    local = np.einsum("tq,tqic,tqjc->tij", _detj_weights(space, quad), basis, basis)
    local = 0.5 * (local + local.transpose(0, 2, 1))
    dofs = space.cell_dofs
    rows = np.broadcast_to(dofs[:, :, None], local.shape)
    cols = np.broadcast_to(dofs[:, None, :], local.shape)
    full = _to_csr(rows, cols, local, (space.ndofs, space.ndofs))
    return SparseOperator(matrix=_restrict(full, space, space), symmetry=Symmetry.SPD)


def derivative_matrix(source: FeSpace, target: FeSpace) -> SparseOperator:
    """Exact coefficient matrix of d from ``source`` into ``target``."""
    if source.mesh is not target.mesh and source.mesh.n != target.mesh.n:
        raise AssemblyError("source and target spaces live on different meshes")
    if target.form_degree != source.form_degree + 1:
        raise AssemblyError(
            f"d maps {source.form_degree}-forms to {source.form_degree + 1}-forms, "
            f"not {target.form_degree}-forms"
        )
    if target.essential and not source.essential:
        raise AssemblyError(
            "d of a space without boundary conditions is not contained in a "
            "space with homogeneous trace"
        )

    d0, d1 = reference_derivatives()
    reference = d0 if source.family is FormFamily.P2 else d1
    local = (
        target.cell_signs[:, :, None] * reference[None, :, :] * source.cell_signs[:, None, :]
    )
    rows = np.broadcast_to(target.cell_dofs[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(source.cell_dofs[:, None, :], local.shape).ravel()
    vals = local.ravel()

    # Shared DOFs receive identical local values: keep the first occurrence.
    linear = rows * source.ndofs + cols
    _, first = np.unique(linear, return_index=True)
    first = np.sort(first)
    full = _to_csr(rows[first], cols[first], vals[first], (target.ndofs, source.ndofs))
    full.eliminate_zeros()
    return SparseOperator(matrix=_restrict(full, target, source))


def load_vector(
    space: FeSpace, f: Callable[[np.ndarray], np.ndarray], quad: QuadratureRule
) -> np.ndarray:
    """Entries <f, basis_i> over the free DOFs.

    ``f`` takes points of shape (T, Q, 2) and returns (T, Q) for scalar
    proxies or (T, Q, 2) for vector proxies.
    """
    values = _field_values(space, f, quad)
    basis = space.tabulate(quad.points)
    local = np.einsum("tq,tqc,tqic->ti", _detj_weights(space, quad), values, basis)
    full = np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.ndofs)
    return space.restrict(full)


def _field_values(space: FeSpace, f: Callable, quad: QuadratureRule) -> np.ndarray:
    size = space.value_size
    points = space.physical_points(quad.points)
    values = np.asarray(f(points), dtype=float)
    if values.shape == points.shape[:2]:
        values = values[..., None]
    if values.shape != points.shape[:2] + (size,):
        raise AssemblyError(
            f"field returned shape {values.shape}, expected {points.shape[:2] + (size,)}"
        )
    return values


def function_values(space: FeSpace, coefficients: np.ndarray, quad: QuadratureRule) -> np.ndarray:
    """Values of a free-coefficient vector at the quadrature points, (T, Q, value_size)."""
    local = space.extend(coefficients)[space.cell_dofs]
    return np.einsum("tqic,ti->tqc", space.tabulate(quad.points), local)


def l2_error(
    space: FeSpace,
    coefficients: np.ndarray,
    exact: Callable[[np.ndarray], np.ndarray],
    quad: QuadratureRule,
) -> float:
    """L2 norm of ``exact`` minus the discrete function."""
    difference = _field_values(space, exact, quad) - function_values(space, coefficients, quad)
    integrand = np.sum(difference**2, axis=2)
    return float(np.sqrt(np.sum(_detj_weights(space, quad) * integrand)))


def export_coo(operator: SparseOperator, path: Path) -> Path:
    """Plain-text ``row col value`` listing of the operator entries."""
    path = Path(path)
    coo = operator.matrix.tocoo()
    lines = [f"{r} {c} {v:.17g}" for r, c, v in zip(coo.row, coo.col, coo.data)]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path
