import numpy as np
import pytest

from src import jets
from src.cases import (CaseDefinition, available_cases, boundary, forcing, get_case, initial_field,
                       jet_eval, register_case, solution_field)

H = 1e-3


def _d(fn, axis, *point):
    """Fourth-order central difference of fn(t, x, y) along t (0), x (1) or y (2)."""
    def shifted(s):
        p = list(point)
        p[axis] = p[axis] + s * H
        return fn(*p)

    return (-shifted(2) + 8 * shifted(1) - 8 * shifted(-1) + shifted(-2)) / (12 * H)


def test_polynomial_jet_by_hand():
    t, x, y = jets.variables(0.0, 2.0, 3.0)
    u = x * y
    assert u.value == pytest.approx(6.0)
    assert u.u_x == pytest.approx(3.0)
    assert u.u_y == pytest.approx(2.0)
    assert u.u_xy == pytest.approx(1.0)
    for name in ("u_xx", "u_yy", "u_xxx", "u_xxy", "u_xyy", "u_yyy", "u_t", "u_tx", "u_ty"):
        assert getattr(u, name) == pytest.approx(0.0)
    v = x ** 3 * y + t * x
    assert v.u_xxx == pytest.approx(6.0 * 3.0)
    assert v.u_xxy == pytest.approx(6.0 * 2.0)
    assert v.u_tx == pytest.approx(1.0)
    assert v.u_t == pytest.approx(2.0)


def test_elementary_functions_match_closed_forms():
    t, x, y = jets.variables(0.3, 0.7, -0.4)
    e = jets.exp(x * y)
    assert e.u_xy == pytest.approx(np.exp(-0.28) * (1 + 0.7 * -0.4))
    s = jets.sin(x)
    assert s.u_xxx == pytest.approx(-np.cos(0.7))
    r = 1.0 / (2.0 - t)
    assert r.u_t == pytest.approx(1.0 / 1.7 ** 2)
    c = jets.cos(2.0 * y)
    assert c.u_yy == pytest.approx(-4.0 * np.cos(-0.8))


def test_jet_rejects_unsupported_operations():
    _, x, _ = jets.variables(0.0, 0.0, 1.0)
    with pytest.raises(ZeroDivisionError):
        jets.recip(x)
    with pytest.raises(ValueError):
        x ** -1
    with pytest.raises(ValueError):
        x.partial(2, 0, 0)


def test_jets_vectorise_over_points(rng):
    x = rng.uniform(0, 1, 50)
    y = rng.uniform(0, 1, 50)
    u = jet_eval(get_case("stationary"), 0.0, x, y)
    assert u.value.shape == (50,)
    assert np.allclose(u.u_x, 2 * np.pi * np.sin(np.pi * x) * np.cos(np.pi * x) * np.sin(np.pi * y))


def test_stationary_case_values():
    case = get_case("stationary")
    assert jet_eval(case, 0.0, 0.5, 0.5).value == pytest.approx(1.0)
    s = np.linspace(0, 1, 7)
    for x, y in [(s, 0 * s), (s, 0 * s + 1), (0 * s, s), (0 * s + 1, s)]:
        assert np.allclose(jet_eval(case, 0.0, x, y).value, 0.0, atol=1e-15)
    assert np.allclose(boundary(case, 0.3, s, 0 * s), 0.0, atol=1e-15)


def test_instationary_case_boundary_behaviour():
    case = get_case("instationary")
    t = np.array([0.0, 0.4, 0.9])
    for x in (0.0, 1.0):
        u = jet_eval(case, t, x, 0.37)
        assert np.allclose(u.value, 1.0)
        assert np.allclose(u.u_x, 0.0, atol=1e-14)
    g = boundary(case, 0.25, np.array([0.3, 0.5]), np.zeros(2))
    assert np.all(np.abs(g - 1.0) > 1e-3)
    with pytest.raises(ValueError):
        jet_eval(case, 2.0, 0.5, 0.5)


@pytest.mark.parametrize("name", ["stationary", "instationary"])
def test_stored_partials_match_finite_differences(name, rng):
    case = get_case(name)
    for _ in range(10):
        t, x, y = rng.uniform(0.1, 0.9, 3)
        u = jet_eval(case, t, x, y)

        def part(attr):
            return lambda tt, xx, yy: getattr(jet_eval(case, tt, xx, yy), attr)

        checks = {
            "u_t": _d(part("value"), 0, t, x, y),
            "u_x": _d(part("value"), 1, t, x, y),
            "u_y": _d(part("value"), 2, t, x, y),
            "u_xx": _d(part("u_x"), 1, t, x, y),
            "u_xy": _d(part("u_x"), 2, t, x, y),
            "u_yy": _d(part("u_y"), 2, t, x, y),
            "u_xxx": _d(part("u_xx"), 1, t, x, y),
            "u_xxy": _d(part("u_xx"), 2, t, x, y),
            "u_xyy": _d(part("u_xy"), 2, t, x, y),
            "u_yyy": _d(part("u_yy"), 2, t, x, y),
            "u_tx": _d(part("u_x"), 0, t, x, y),
            "u_ty": _d(part("u_y"), 0, t, x, y),
        }
        for attr, approx in checks.items():
            exact = float(getattr(u, attr))
            assert float(approx) == pytest.approx(exact, rel=1e-5, abs=1e-6), attr


def test_forcing_gradient_matches_finite_differences():
    case = get_case("instationary")
    t, x, y = 0.25, 0.3, 0.6

    def f(tt, xx, yy):
        return forcing(case, tt, xx, yy)[0]

    value, fx, fy = forcing(case, t, x, y)
    u = jet_eval(case, t, x, y)
    assert value == pytest.approx(u.u_t - u.u_xx + x * u.u_y, rel=1e-13)
    assert fx == pytest.approx(_d(f, 1, t, x, y), rel=1e-6)
    assert fy == pytest.approx(_d(f, 2, t, x, y), rel=1e-6)


def test_decay_case_data():
    case = get_case("decay")
    assert not case.manufactured
    u0 = initial_field(case)
    assert u0(0.5, 0.5) == pytest.approx(1.0)
    assert u0(0.0, 0.5) == pytest.approx(0.5)
    gx, gy = u0.gradient(np.array([0.8, 0.5]), np.array([0.5, 0.1]))
    assert np.allclose(gx, [-1.0, 0.0])
    assert np.allclose(gy, [0.0, 1.0])
    f, fx, fy = forcing(case, 1.0, np.array([0.2, 0.4]), np.array([0.1, 0.9]))
    assert not np.any(f) and not np.any(fx) and not np.any(fy)
    assert np.all(boundary(case, 3.0, np.linspace(0, 1, 5), np.zeros(5)) == 0.0)
    with pytest.raises(ValueError):
        jet_eval(case, 0.0, 0.5, 0.5)


def test_solution_field_has_gradient():
    field = solution_field(get_case("stationary"), 0.0)
    gx, gy = field.gradient(np.array([0.25]), np.array([0.5]))
    assert gx[0] == pytest.approx(np.pi * np.sin(np.pi / 2))
    assert gy[0] == pytest.approx(0.0, abs=1e-14)


def test_registry():
    assert {"stationary", "instationary", "decay"} <= set(available_cases())
    with pytest.raises(ValueError):
        get_case("nope")

    def constant_case():
        return CaseDefinition(name="constant", solution=lambda t, x, y: x * 0.0 + 1.0, t_final=1.0)

    register_case("constant", constant_case)
    case = get_case("constant")
    f, fx, fy = forcing(case, 0.5, np.array([0.1, 0.9]), np.array([0.3, 0.4]))
    assert np.allclose(f, 0.0) and np.allclose(fx, 0.0) and np.allclose(fy, 0.0)
    with pytest.raises(TypeError):
        register_case("broken", None)
