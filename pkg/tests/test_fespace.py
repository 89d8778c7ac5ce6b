import numpy as np
import pytest

from app.assembly import derivative_matrix
from app.errors import SpaceError
from app.fespace import (
    FormFamily,
    FormFunction,
    build_space,
    evaluate,
    evaluate_derivative,
    interpolate,
    space_for_degree,
)
from tests.helpers import cell_values, edge_owners, edge_samples


def _quadratic(p):
    return 1 + p[..., 0] - 2 * p[..., 1] + p[..., 0] ** 2 + 3 * p[..., 0] * p[..., 1]


def _rt_field(p):
    # linear part plus x * (x, y): inside the quadratic RT space
    px, py = p[..., 0], p[..., 1]
    return np.stack([1 + 2 * px - py + px * (px + py), 3 - px + py + py * (px + py)], axis=-1)


def test_dimensions(mesh4):
    n = 4
    interior_edges = mesh4.num_edges - 4 * n
    p2 = build_space(mesh4, 0, FormFamily.P2)
    rt = build_space(mesh4, 1, FormFamily.RT)
    p1 = build_space(mesh4, 2, FormFamily.P1DC)
    assert p2.ndofs == mesh4.num_vertices + mesh4.num_edges
    assert p2.nfree == (n - 1) ** 2 + interior_edges
    assert rt.ndofs == 2 * mesh4.num_edges + 2 * mesh4.num_triangles
    assert rt.nfree == 2 * interior_edges + 2 * mesh4.num_triangles
    assert p1.ndofs == p1.nfree == 3 * mesh4.num_triangles
    natural = build_space(mesh4, 1, FormFamily.RT, essential=False)
    assert natural.nfree == natural.ndofs


def test_family_must_match_degree(mesh4):
    with pytest.raises(SpaceError):
        build_space(mesh4, 1, FormFamily.P2)


def test_space_for_degree_outside_complex(mesh4):
    assert space_for_degree(mesh4, -1) is None
    assert space_for_degree(mesh4, 3) is None


def test_coefficient_length_is_checked(mesh4):
    space = build_space(mesh4, 0, FormFamily.P2)
    with pytest.raises(SpaceError):
        FormFunction(space=space, coefficients=np.zeros(space.nfree + 1))


@pytest.mark.parametrize(
    "k, family, field",
    [
        (0, FormFamily.P2, _quadratic),
        (1, FormFamily.RT, _rt_field),
        (2, FormFamily.P1DC, lambda p: 2 - p[..., 0] + 4 * p[..., 1]),
    ],
)
def test_interpolation_reproduces_the_space(mesh4, rng, k, family, field):
    space = build_space(mesh4, k, family, essential=False)
    fn = interpolate(space, field)
    points = rng.random((40, 2))
    np.testing.assert_allclose(evaluate(fn, points), field(points), atol=1e-12)


def test_curl_of_interpolant(mesh4, rng):
    space = build_space(mesh4, 0, FormFamily.P2, essential=False)
    fn = interpolate(space, _quadratic)
    points = rng.random((20, 2))
    px, py = points[:, 0], points[:, 1]
    expected = np.stack([-2 + 3 * px, -(1 + 2 * px + 3 * py)], axis=1)
    np.testing.assert_allclose(evaluate_derivative(fn, points), expected, atol=1e-12)


def test_divergence_of_interpolant(mesh4, rng):
    space = build_space(mesh4, 1, FormFamily.RT, essential=False)
    fn = interpolate(space, _rt_field)
    points = rng.random((20, 2))
    px, py = points[:, 0], points[:, 1]
    expected = (2 + 2 * px + py) + (1 + px + 2 * py)
    np.testing.assert_allclose(evaluate_derivative(fn, points), expected, atol=1e-12)


def test_two_forms_have_no_derivative(mesh4):
    space = build_space(mesh4, 2, FormFamily.P1DC)
    with pytest.raises(SpaceError):
        evaluate_derivative(FormFunction.zeros(space), np.array([[0.5, 0.5]]))


@pytest.mark.parametrize(
    "scalar, vector",
    [
        (lambda p: p[..., 1], lambda p: np.stack([np.ones(p.shape[:-1]), np.zeros(p.shape[:-1])], axis=-1)),
        (lambda p: p[..., 0], lambda p: np.stack([np.zeros(p.shape[:-1]), -np.ones(p.shape[:-1])], axis=-1)),
    ],
    ids=["y", "x"],
)
def test_derivative_matrix_of_coordinates(mesh4, scalar, vector):
    p2 = build_space(mesh4, 0, FormFamily.P2, essential=False)
    rt = build_space(mesh4, 1, FormFamily.RT, essential=False)
    d = derivative_matrix(p2, rt).matrix
    np.testing.assert_allclose(
        d @ interpolate(p2, scalar).coefficients, interpolate(rt, vector).coefficients, atol=1e-13
    )


def test_derivative_commutes_with_interpolation(mesh4):
    p2 = build_space(mesh4, 0, FormFamily.P2, essential=False)
    rt = build_space(mesh4, 1, FormFamily.RT, essential=False)
    p1 = build_space(mesh4, 2, FormFamily.P1DC, essential=False)

    def curl(p):
        px, py = p[..., 0], p[..., 1]
        return np.stack([-2 + 3 * px, -(1 + 2 * px + 3 * py)], axis=-1)

    def div(p):
        return 3 + 3 * p[..., 0] + 3 * p[..., 1]

    np.testing.assert_allclose(
        derivative_matrix(p2, rt).matrix @ interpolate(p2, _quadratic).coefficients,
        interpolate(rt, curl).coefficients,
        atol=1e-12,
    )
    np.testing.assert_allclose(
        derivative_matrix(rt, p1).matrix @ interpolate(rt, _rt_field).coefficients,
        interpolate(p1, div).coefficients,
        atol=1e-12,
    )


def test_essential_interpolation_drops_boundary_values(mesh4):
    space = build_space(mesh4, 0, FormFamily.P2)
    fn = interpolate(space, _quadratic)
    full = fn.full_coefficients()
    assert np.all(full[space.boundary_mask] == 0)
    assert fn.coefficients.shape == (space.nfree,)


def test_form_function_arithmetic(mesh4, rng):
    space = build_space(mesh4, 1, FormFamily.RT)
    a = FormFunction(space=space, coefficients=rng.standard_normal(space.nfree))
    b = FormFunction(space=space, coefficients=rng.standard_normal(space.nfree))
    np.testing.assert_allclose(((a + b) - b).coefficients, a.coefficients)


def _random_function(mesh, k, family, essential, rng):
    space = build_space(mesh, k, family, essential=essential)
    return FormFunction(space=space, coefficients=rng.standard_normal(space.nfree))


@pytest.mark.parametrize("essential", [True, False])
def test_zero_forms_are_continuous_across_edges(mesh4, rng, essential):
    fn = _random_function(mesh4, 0, FormFamily.P2, essential, rng)
    for edge, owners in enumerate(edge_owners(mesh4)):
        if len(owners) != 2:
            continue
        points, _ = edge_samples(mesh4, edge)
        left = cell_values(fn, np.full(len(points), owners[0]), points)
        right = cell_values(fn, np.full(len(points), owners[1]), points)
        np.testing.assert_allclose(left, right, atol=1e-12)


@pytest.mark.parametrize("essential", [True, False])
def test_one_forms_have_continuous_normal_component(mesh4, rng, essential):
    fn = _random_function(mesh4, 1, FormFamily.RT, essential, rng)
    for edge, owners in enumerate(edge_owners(mesh4)):
        if len(owners) != 2:
            continue
        points, normal = edge_samples(mesh4, edge)
        left = cell_values(fn, np.full(len(points), owners[0]), points) @ normal
        right = cell_values(fn, np.full(len(points), owners[1]), points) @ normal
        scale = max(np.abs(left).max(), 1.0)
        np.testing.assert_allclose(left, right, atol=1e-12 * scale)


def test_one_forms_may_jump_tangentially(mesh4, rng):
    fn = _random_function(mesh4, 1, FormFamily.RT, False, rng)
    jumps = []
    for edge, owners in enumerate(edge_owners(mesh4)):
        if len(owners) == 2:
            points, normal = edge_samples(mesh4, edge)
            tangent = np.array([-normal[1], normal[0]])
            left = cell_values(fn, np.full(len(points), owners[0]), points) @ tangent
            right = cell_values(fn, np.full(len(points), owners[1]), points) @ tangent
            jumps.append(np.abs(left - right).max())
    assert max(jumps) > 1e-3


def test_free_functions_have_vanishing_trace(mesh4, rng):
    p2 = _random_function(mesh4, 0, FormFamily.P2, True, rng)
    rt = _random_function(mesh4, 1, FormFamily.RT, True, rng)
    boundary = [edge for edge, owners in enumerate(edge_owners(mesh4)) if len(owners) == 1]
    assert len(boundary) == 4 * mesh4.n
    owners = edge_owners(mesh4)
    for edge in boundary:
        points, normal = edge_samples(mesh4, edge)
        cells = np.full(len(points), owners[edge][0])
        assert np.abs(cell_values(p2, cells, points)).max() <= 1e-12
        scale = max(np.abs(cell_values(rt, cells, points)).max(), 1.0)
        assert np.abs(cell_values(rt, cells, points) @ normal).max() <= 1e-12 * scale
