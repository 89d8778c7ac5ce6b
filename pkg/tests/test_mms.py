import math

import numpy as np
import pytest
import sympy

from app.assembly import l2_error, reference_quadrature
from app.calculus import DeRhamComplex
from app.errors import ConfigError, WaveError
from app.mesh import structured_unit_square
from app.mms import (
    PUBLISHED_ERRORS,
    PUBLISHED_LONGTIME,
    PUBLISHED_ORDERS,
    build_report,
    case_k0,
    case_k1,
    case_k2,
    check_orders,
    compute_orders,
    convergence_study,
    error_norms,
    get_case,
    solve_level,
    temporal_study,
)
from app.models import ErrorRow

x, y, t = sympy.symbols("x y t")
PI = sympy.pi


def _bump(s):
    return s**2 * (s - 1) ** 2


def _curl(q):
    return [sympy.diff(q, y), -sympy.diff(q, x)]


def _rot(v):
    # adjoint of curl: 1-forms to 0-forms
    return sympy.diff(v[1], x) - sympy.diff(v[0], y)


def _div(v):
    return sympy.diff(v[0], x) + sympy.diff(v[1], y)


def _grad(q):
    return [sympy.diff(q, x), sympy.diff(q, y)]


def _symbolic_case(name):
    """Exact fields from mu alone: sigma_t = delta mu, omega_t = d mu, f = mu_t + d sigma + delta omega."""
    if name == "k0":
        mu = sympy.exp(-t) * sympy.sin(PI * x) * sympy.sin(PI * y)
        omega = [-c for c in _curl(mu)]
        source = sympy.diff(mu, t) + _rot(omega)
        fields = {"mu": (mu, _curl(mu)), "omega": (omega, _div(omega))}
    elif name == "k1":
        mu = [
            sympy.exp(-t) * sympy.sin(PI * x) ** 2 * sympy.sin(PI * y) ** 2,
            sympy.exp(-t) * _bump(x) * _bump(y),
        ]
        sigma = -_rot(mu)
        omega = -_div(mu)
        source = [
            sympy.diff(m, t) + c - g
            for m, c, g in zip(mu, _curl(sigma), _grad(omega))
        ]
        fields = {"sigma": (sigma, _curl(sigma)), "mu": (mu, _div(mu)), "omega": (omega, None)}
    else:
        mu = sympy.exp(-t) * sympy.sin(PI * x) * sympy.sin(PI * y)
        sigma = _grad(mu)
        source = sympy.diff(mu, t) + _div(sigma)
        fields = {"sigma": (sigma, _div(sigma)), "mu": (mu, None)}
    return fields, source


def _numeric(expr, points, time):
    fn = sympy.lambdify((x, y, t), expr, "numpy")
    if isinstance(expr, list):
        return np.stack(
            [np.broadcast_to(np.asarray(fn(points[:, 0], points[:, 1], time)[i], dtype=float), points.shape[:1])
             for i in range(len(expr))],
            axis=-1,
        )
    return np.broadcast_to(np.asarray(fn(points[:, 0], points[:, 1], time), dtype=float), points.shape[:1])


@pytest.mark.parametrize("factory", [case_k0, case_k1, case_k2])
def test_fields_and_sources_match_symbolic_derivation(factory, rng):
    case = factory()
    fields, source = _symbolic_case(case.name)
    points = rng.random((25, 2))
    time = 0.37
    assert set(case.fields) == set(fields)
    for name, (value, derivative) in fields.items():
        field = case.fields[name]
        np.testing.assert_allclose(field.value(points, time), _numeric(value, points, time), atol=1e-12)
        if derivative is not None:
            np.testing.assert_allclose(
                field.derivative(points, time), _numeric(derivative, points, time), atol=1e-11
            )
    np.testing.assert_allclose(case.source(points, time), _numeric(source, points, time), atol=1e-10)


def test_case_metadata():
    assert case_k0().columns == ["mu", "curl_mu", "omega"]
    assert case_k1().columns == ["sigma", "curl_sigma", "mu", "div_mu", "omega"]
    assert case_k2().columns == ["sigma", "div_sigma", "mu"]
    assert case_k2().essential is False
    assert get_case("k1").k == 1
    with pytest.raises(ValueError):
        get_case("k3")
    for name, columns in PUBLISHED_ERRORS.items():
        assert list(columns) == get_case(name).columns
        assert set(PUBLISHED_ORDERS[name]) == set(columns)
    assert list(PUBLISHED_LONGTIME) == [10.0, 30.0, 50.0]


def _rows(columns, orders, levels=(4, 8, 16)):
    return [
        ErrorRow(
            case="k0",
            n=n,
            dt=1e-4,
            T=4e-4,
            errors={column: 3.0 * n ** (-order) for column, order in zip(columns, orders)},
        )
        for n in levels
    ]


def test_compute_orders():
    columns = ["mu", "curl_mu", "omega"]
    orders = compute_orders(_rows(columns, [3.0, 2.0, 0.0]), columns)
    assert [row.label for row in orders] == ["order(4-8)", "order(8-16)", "order(lsq)"]
    for row in orders:
        assert row.orders["mu"] == pytest.approx(3.0)
        assert row.orders["curl_mu"] == pytest.approx(2.0)
        assert row.orders["omega"] == 0.0


def test_compute_orders_single_level():
    assert compute_orders(_rows(["mu"], [2.0], levels=(8,)), ["mu"]) == []


def test_published_rates_pass_the_self_check():
    case = case_k0()
    published = PUBLISHED_ORDERS["k0"]
    rows = _rows(case.columns, [published[column] for column in case.columns])
    report = build_report(case, rows)
    assert check_orders(report, 0.25) == []

    shifted = _rows(case.columns, [published[column] + 0.5 for column in case.columns])
    violations = check_orders(build_report(case, shifted), 0.25)
    assert len(violations) == 3
    assert violations[0].startswith("k0 mu")


def test_report_rendering():
    case = case_k0()
    report = build_report(case, _rows(case.columns, [3.0, 2.0, 2.0]))
    text = str(report)
    assert "order(lsq)" in text
    assert report.column("mu") == [row.errors["mu"] for row in report.rows]
    assert report.least_squares["curl_mu"] == pytest.approx(2.0)


def test_convergence_study_needs_two_levels():
    with pytest.raises(ConfigError):
        convergence_study(case_k0(), [4], 1e-4, 4e-4)


def test_error_norms_check_the_time(essential4):
    from app.wave import initial_state

    ops = essential4.window(0)
    case = case_k0()
    state = initial_state(ops, *case.initial_fields(0.0))
    with pytest.raises(WaveError):
        error_norms(ops, state, case, 1.0)
    row = error_norms(ops, state, case, 0.0)
    assert list(row.errors) == case.columns
    assert row.n == 4


def test_solve_level_checkpoints():
    result = solve_level(case_k1(), 2, 0.1, 0.3, checkpoints=[0.1, 0.3])
    assert [row.T for row in result.rows] == pytest.approx([0.1, 0.3])
    assert len(result.energies) == 4
    assert all(row.window_max == {} for row in result.rows)


def test_solve_level_tracks_window_maxima():
    result = solve_level(case_k1(), 2, 0.1, 0.4, checkpoints=[0.2], track=["mu"])
    assert [row.T for row in result.rows] == pytest.approx([0.2, 0.4])
    for row in result.rows:
        assert set(row.window_max) == {"mu"}
        # the report step closes its own window
        assert row.window_max["mu"] >= row.errors["mu"]


def _assert_orders(report, tolerance=0.25):
    assert check_orders(report, tolerance) == []


@pytest.mark.slow
@pytest.mark.parametrize("name", ["k0", "k1", "k2"])
def test_spatial_convergence_matches_published_orders(name):
    report = convergence_study(get_case(name), [4, 8, 16], 1e-4, 4e-4)
    _assert_orders(report)
    for column, published in PUBLISHED_ERRORS[name].items():
        for observed, expected in zip(report.column(column), published):
            assert expected / 3 <= observed <= 3 * expected, (column, observed, expected)


@pytest.mark.slow
def test_long_time_errors_stay_bounded():
    result = solve_level(case_k1(), 16, 0.1, 50.0, checkpoints=[10.0, 30.0, 50.0], track=["mu"])
    peaks = [row.window_max["mu"] for row in result.rows]
    assert len(peaks) == 3
    assert peaks[-1] <= 1.2 * peaks[0]
    # far below the published 3.75e-1, which is the norm of the initial mu
    assert max(row.errors["mu"] for row in result.rows) < 1e-2


@pytest.mark.slow
def test_crank_nicolson_is_second_order_in_time():
    report = temporal_study(case_k2(), 32, [0.1, 0.05, 0.025], 0.5)
    for ratio in report.ratios:
        assert 3.2 <= ratio <= 4.8
    assert math.isfinite(report.errors[-1])


def test_case_point_values():
    centre = np.array([[0.5, 0.5]])
    k0 = case_k0()
    assert k0.fields["mu"].value(centre, 0.0)[0] == pytest.approx(1.0)
    np.testing.assert_allclose(k0.fields["omega"].value(centre, 0.8), [[0.0, 0.0]], atol=1e-15)
    assert k0.source(centre, 0.0)[0] == pytest.approx(-(1 + 2 * math.pi**2))

    k1 = case_k1()
    assert k1.fields["sigma"].value(centre, 0.0)[0] == pytest.approx(0.0, abs=1e-15)
    boundary = np.array([[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.6, 1.0]])
    np.testing.assert_allclose(k1.fields["mu"].value(boundary, 0.5), 0.0, atol=1e-15)

    k2 = case_k2()
    assert k2.fields["sigma"].derivative(centre, 0.0)[0] == pytest.approx(-2 * math.pi**2)
    # nonzero normal flux on x = 0
    assert abs(k2.fields["sigma"].value(np.array([[0.0, 0.5]]), 0.0)[0, 0]) == pytest.approx(math.pi)


def test_published_long_time_mu_is_the_initial_norm():
    mesh = structured_unit_square(16)
    space = DeRhamComplex(mesh).space(1)
    mu = case_k1().fields["mu"]
    norm = l2_error(space, np.zeros(space.nfree), lambda p: mu.value(p, 0.0), reference_quadrature(12))
    assert norm == pytest.approx(3 / 8, rel=1e-4)
    for values in PUBLISHED_LONGTIME.values():
        assert values["mu"] == pytest.approx(norm, rel=1e-3)
