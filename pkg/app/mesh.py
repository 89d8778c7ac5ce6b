"""Oriented triangulations of the unit square.

Vertices are numbered row by row, ``j * (n + 1) + i`` for the grid point
``(i / n, j / n)``. Each grid square is split along its lower-left to
upper-right diagonal into ``[v00, v10, v11]`` and ``[v00, v11, v01]``, both
counterclockwise. Edges are the sorted vertex pairs in lexicographic order.
Local edge ``i`` of a triangle is the edge opposite local vertex ``i`` and is
traversed ``(1, 2)``, ``(2, 0)``, ``(0, 1)``.
"""

from pathlib import Path
from typing import Tuple

import numpy as np
import structlog
from pydantic import BaseModel, Field
from scipy import sparse

from app.errors import MeshError

logger = structlog.get_logger(__name__)

LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])
LOCATE_TOLERANCE = 1e-12


class SimplicialMesh(BaseModel):
    n: int = Field(description="Number of grid intervals per side")
    vertices: np.ndarray = Field(description="Vertex coordinates, shape (V, 2)")
    edges: np.ndarray = Field(description="Vertex pairs with low index first, shape (E, 2)")
    triangles: np.ndarray = Field(description="Counterclockwise vertex triples, shape (T, 3)")
    triangle_edges: np.ndarray = Field(description="Edge index of each local edge, shape (T, 3)")
    triangle_edge_signs: np.ndarray = Field(
        description="+1 if the triangle traverses the edge low to high, else -1"
    )
    boundary_vertices: np.ndarray = Field(description="Boolean mask over vertices")
    boundary_edges: np.ndarray = Field(description="Boolean mask over edges")
    jacobians: np.ndarray = Field(description="Affine map Jacobians, shape (T, 2, 2)")
    determinants: np.ndarray = Field(description="Jacobian determinants, shape (T,)")
    inverse_jacobians: np.ndarray = Field(description="Inverse Jacobians, shape (T, 2, 2)")
    h: float = Field(description="Largest triangle diameter")
    h_area: float = Field(description="max over triangles of |K|^(1/2)")

    class Config:
        arbitrary_types_allowed = True
        frozen = True

    @property
    def nominal_h(self) -> float:
        """Level label 1/n used in reports."""
        return 1.0 / self.n

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        return 0.5 * self.determinants

    def euler_characteristic(self) -> int:
        return self.num_vertices - self.num_edges + self.num_triangles

    def __str__(self) -> str:
        return (
            f"SimplicialMesh(n={self.n}, V={self.num_vertices}, "
            f"E={self.num_edges}, T={self.num_triangles})"
        )


def structured_unit_square(n: int) -> SimplicialMesh:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise MeshError(f"mesh level must be a positive integer, got {n!r}")
    n = int(n)

    grid = np.linspace(0.0, 1.0, n + 1)
    xs, ys = np.meshgrid(grid, grid)
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    j, i = np.divmod(np.arange(n * n), n)
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack([v00, v10, v11])
    triangles[1::2] = np.column_stack([v00, v11, v01])

    local = triangles[:, LOCAL_EDGES]
    pairs = np.sort(local, axis=2).reshape(-1, 2)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    triangle_edges = inverse.reshape(-1, 3)
    triangle_edge_signs = np.where(local[:, :, 0] < local[:, :, 1], 1, -1)

    counts = np.bincount(triangle_edges.ravel(), minlength=len(edges))
    boundary_edges = counts == 1
    boundary_vertices = np.zeros(len(vertices), dtype=bool)
    boundary_vertices[edges[boundary_edges].ravel()] = True

    corners = vertices[triangles]
    jacobians = np.stack(
        [corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]], axis=2
    )
    determinants = np.linalg.det(jacobians)
    inverse_jacobians = np.linalg.inv(jacobians)

    if np.any(determinants <= 0):
        raise MeshError("triangulation contains a non-positively oriented triangle")

    diameters = np.max(
        np.linalg.norm(corners[:, LOCAL_EDGES[:, 0]] - corners[:, LOCAL_EDGES[:, 1]], axis=2),
        axis=1,
    )

    mesh = SimplicialMesh(
        n=n,
        vertices=vertices,
        edges=edges,
        triangles=triangles,
        triangle_edges=triangle_edges,
        triangle_edge_signs=triangle_edge_signs,
        boundary_vertices=boundary_vertices,
        boundary_edges=boundary_edges,
        jacobians=jacobians,
        determinants=determinants,
        inverse_jacobians=inverse_jacobians,
        h=float(diameters.max()),
        h_area=float(np.sqrt(0.5 * determinants.max())),
    )
    logger.debug("mesh built", mesh=str(mesh))
    return mesh


def boundary_entities(mesh: SimplicialMesh) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of the boundary vertices and boundary edges."""
    return np.flatnonzero(mesh.boundary_vertices), np.flatnonzero(mesh.boundary_edges)


def incidence_matrices(mesh: SimplicialMesh) -> Tuple[sparse.csr_matrix, sparse.csr_matrix]:
    """Signed vertex-to-edge and edge-to-triangle incidence, ``d1 @ d0 == 0``."""
    num_edges = mesh.num_edges
    rows = np.repeat(np.arange(num_edges), 2)
    cols = mesh.edges.ravel()
    vals = np.tile([-1.0, 1.0], num_edges)
    d0 = sparse.coo_matrix(
        (vals, (rows, cols)), shape=(num_edges, mesh.num_vertices)
    ).tocsr()

    d1 = sparse.coo_matrix(
        (
            mesh.triangle_edge_signs.ravel().astype(float),
            (np.repeat(np.arange(mesh.num_triangles), 3), mesh.triangle_edges.ravel()),
        ),
        shape=(mesh.num_triangles, num_edges),
    ).tocsr()
    return d0, d1


def locate(mesh: SimplicialMesh, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Containing triangle and reference coordinates of each point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    outside = np.any(
        (points < -LOCATE_TOLERANCE) | (points > 1.0 + LOCATE_TOLERANCE), axis=1
    )
    if np.any(outside):
        raise MeshError(f"points outside the unit square: {points[outside][:3].tolist()}")

    n = mesh.n
    scaled = np.clip(points, 0.0, 1.0) * n
    cell = np.minimum(np.floor(scaled).astype(np.int64), n - 1)
    offset = scaled - cell
    upper = offset[:, 1] > offset[:, 0]
    cells = 2 * (cell[:, 1] * n + cell[:, 0]) + upper

    origin = mesh.vertices[mesh.triangles[cells, 0]]
    reference = np.einsum("pab,pb->pa", mesh.inverse_jacobians[cells], points - origin)
    return cells, reference


def dump_mesh(mesh: SimplicialMesh, path: Path) -> Path:
    """Plain-text dump: kind, index, constituent indices, boundary flag."""
    path = Path(path)
    lines = []
    for index, (x, y) in enumerate(mesh.vertices):
        lines.append(f"vertex {index} {x:.17g} {y:.17g} {int(mesh.boundary_vertices[index])}")
    for index, (a, b) in enumerate(mesh.edges):
        lines.append(f"edge {index} {a} {b} {int(mesh.boundary_edges[index])}")
    for index, (a, b, c) in enumerate(mesh.triangles):
        lines.append(f"triangle {index} {a} {b} {c} 0")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
