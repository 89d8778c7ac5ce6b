import numpy as np

from app.fespace import evaluate, evaluate_derivative


def field_of(fn):
    """Wrap a discrete function as a callable on point arrays of any leading shape."""

    def values(points):
        points = np.asarray(points, dtype=float)
        flat = evaluate(fn, points.reshape(-1, 2))
        return flat.reshape(points.shape[:-1] + flat.shape[1:])

    return values


def derivative_of(fn):
    def values(points):
        points = np.asarray(points, dtype=float)
        flat = evaluate_derivative(fn, points.reshape(-1, 2))
        return flat.reshape(points.shape[:-1] + flat.shape[1:])

    return values


def cell_values(fn, cells, points):
    """Values of fn's restriction to ``cells`` at physical points, (P, value_size)."""
    space = fn.space
    mesh = space.mesh
    origins = mesh.vertices[mesh.triangles[cells, 0]]
    reference = np.einsum("pab,pb->pa", mesh.inverse_jacobians[cells], points - origins)
    basis = space.map_values(space.element.tabulate(reference)[:, None], cells)[:, 0]
    local = fn.full_coefficients()[space.cell_dofs[cells]]
    return np.einsum("plc,pl->pc", basis, local)


def edge_owners(mesh):
    """Triangles adjacent to each edge."""
    owners = [[] for _ in range(mesh.num_edges)]
    for triangle, edges in enumerate(mesh.triangle_edges):
        for edge in edges:
            owners[edge].append(triangle)
    return owners


def edge_samples(mesh, edge, count=5):
    """Gauss points along an edge and its unit normal."""
    a, b = mesh.vertices[mesh.edges[edge]]
    s = 0.5 * (np.polynomial.legendre.leggauss(count)[0] + 1.0)
    tangent = b - a
    normal = np.array([tangent[1], -tangent[0]]) / np.linalg.norm(tangent)
    return a + s[:, None] * tangent, normal
