import numpy as np
import pytest
import sympy as sy
from hypothesis import given, settings, strategies as st

from poddiv.assembly import load_vector
from poddiv.errors import ConfigError
from poddiv.problems import DESK, DeskProblem, ManufacturedSolution, desk_forcing, table_forcing, zero_forcing

X, Y, T = sy.symbols("x y t", real=True)


def symbolic_manufactured(nu):
    psi = sy.sin(sy.pi * X) ** 2 * sy.sin(sy.pi * Y) ** 2 * sy.cos(T)
    u = sy.Matrix([sy.diff(psi, Y), -sy.diff(psi, X)])
    p = sy.sin(2 * sy.pi * X) * sy.sin(2 * sy.pi * Y) * sy.cos(T)
    grad = u.jacobian([X, Y])
    lap = sy.Matrix([sy.diff(u[c], X, 2) + sy.diff(u[c], Y, 2) for c in range(2)])
    f = sy.diff(u, T) - nu * lap + grad * u + sy.Matrix([sy.diff(p, X), sy.diff(p, Y)])
    return u, grad, p, f


@pytest.fixture(scope="module")
def oracle():
    nu = sy.Rational(3, 7)
    u, grad, p, f = symbolic_manufactured(nu)
    lam = lambda e: sy.lambdify((X, Y, T), e, "numpy")
    return float(nu), lam(u), lam(grad), lam(p), lam(f)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 3))
@settings(max_examples=50, deadline=None)
def test_manufactured_fields_match_symbolic(oracle, x, y, t):
    nu, u, grad, p, f = oracle
    ms = ManufacturedSolution(nu)
    assert np.allclose(ms.velocity(t)(x, y), u(x, y, t).ravel(), atol=1e-12)
    assert np.allclose(np.array(ms.velocity_gradient(t)(x, y)), grad(x, y, t), atol=1e-12)
    assert ms.pressure(t)(x, y) == pytest.approx(float(p(x, y, t)), abs=1e-12)
    assert np.allclose(ms.forcing()(x, y, t), f(x, y, t).ravel(), atol=1e-10)


def test_manufactured_is_divergence_free_and_vanishes_on_boundary():
    ms = ManufacturedSolution(1.0)
    s = np.linspace(0, 1, 11)
    g = ms.velocity_gradient(0.3)(*np.meshgrid(s, s))
    assert np.max(np.abs(g[0][0] + g[1][1])) <= 1e-12
    for x, y in ((s, 0 * s), (s, 1 + 0 * s), (0 * s, s), (1 + 0 * s, s)):
        assert np.max(np.abs(ms.velocity(0.3)(x, y))) <= 1e-14


def test_manufactured_pressure_has_zero_mean():
    g, w = np.polynomial.legendre.leggauss(20)
    x = 0.5 * (g + 1)
    P = ManufacturedSolution(1.0).pressure(0.0)(*np.meshgrid(x, x))
    assert abs(0.25 * w @ P @ w) <= 1e-14


def test_zero_forcing(space4):
    f = zero_forcing()
    assert f.is_zero
    assert not np.any(f.load(space4, 1.0))


def test_table_forcing_interpolates():
    f = table_forcing([[0, 0, 1], [1, 2, 3]])
    assert f(0.3, 0.7, 0.5) == pytest.approx((1.0, 2.0))
    assert f(0.3, 0.7, 5.0) == pytest.approx((2.0, 3.0))


@pytest.mark.parametrize("rows", [[], [[0, 1]], [[1, 0, 0], [0, 0, 0]]])
def test_table_forcing_rejects(rows):
    with pytest.raises(ConfigError):
        table_forcing(rows)


def test_desk_terms_and_period():
    f = desk_forcing(DeskProblem(harmonics=2))
    assert len(f.terms) == 5
    assert DESK.period == pytest.approx(0.5)


def test_desk_forcing_is_solenoidal():
    f = desk_forcing()
    h = 1e-6
    x, y = np.meshgrid(np.linspace(0.05, 0.95, 7), np.linspace(0.05, 0.95, 7))
    for _, F in f.terms:
        div = ((F(x + h, y)[0] - F(x - h, y)[0]) + (F(x, y + h)[1] - F(x, y - h)[1])) / (2 * h)
        assert np.max(np.abs(div)) <= 1e-6


def test_load_combines_terms(space4):
    f = desk_forcing()
    t = 0.37
    direct = load_vector(space4, lambda x, y: f(x, y, t))
    assert np.allclose(f.load(space4, t), direct, atol=1e-14)
    assert np.allclose(f.time_factors(t) @ np.array(f.term_loads(space4)), direct, atol=1e-14)
