import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from poddiv.assembly import (ConvectionForm, FormKind, assemble_convection, assemble_matrix, inner, load_vector,
                             norm, pressure_space_projection_error, trilinear)
from poddiv.errors import ContractError, UnsupportedError
from poddiv.fespace import PRESSURE, VELOCITY, FeFunction, build_taylor_hood, interpolate
from poddiv.mesh import unit_square_mesh
from poddiv.verify import emac_identity_residual, h1_norm, random_fields


@pytest.fixture(scope="module")
def space2():
    return build_taylor_hood(unit_square_mesh(2, side_markers=True))


@pytest.fixture(scope="module")
def dense2(space2):
    return dict(zip(("mass", "stiffness", "graddiv", "divergence"), oracle.dense_matrices(space2)))


@pytest.mark.parametrize("kind", list(FormKind))
def test_matrices_match_dense_oracle(space2, dense2, kind):
    mat = assemble_matrix(kind, space2).toarray()
    ref = dense2[kind.value]
    assert np.max(np.abs(mat - ref)) <= 1e-12 * np.max(np.abs(ref))


@pytest.mark.parametrize("kind", [FormKind.MASS, FormKind.STIFFNESS, FormKind.GRADDIV])
def test_symmetric_and_sorted(space4, kind):
    mat = assemble_matrix(kind, space4)
    assert mat.has_sorted_indices
    for i in range(mat.shape[0]):
        row = mat.indices[mat.indptr[i]:mat.indptr[i + 1]]
        assert np.all(np.diff(row) > 0)
    assert abs(mat - mat.T).max() <= 1e-12 * abs(mat).max()


def test_divergence_shape(space4):
    assert assemble_matrix(FormKind.DIVERGENCE, space4).shape == (space4.n_pre, space4.n_vel)


def test_stiffness_kills_constants(space4):
    const = interpolate(space4, VELOCITY, lambda x, y: (1 + 0 * x, -2 + 0 * y)).coef
    assert np.max(np.abs(assemble_matrix(FormKind.STIFFNESS, space4) @ const)) <= 1e-12


def test_mass_total(space4):
    assert assemble_matrix(FormKind.MASS, space4).sum() == pytest.approx(2.0, abs=1e-12)


def test_graddiv_of_rotation(space4):
    u = interpolate(space4, VELOCITY, lambda x, y: (y, -x)).coef
    assert abs(u @ (assemble_matrix(FormKind.GRADDIV, space4) @ u)) <= 1e-12


def test_unknown_kind(space4):
    with pytest.raises(ValueError):
        assemble_matrix("curl", space4)


# ---------------------------------------------------------------------------
# convection
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("form", list(ConvectionForm))
def test_trilinear_matches_oracle(space2, form, rng):
    u, v, w = (rng.standard_normal(space2.n_vel) for _ in range(3))
    F = [FeFunction(space2, VELOCITY, c) for c in (u, v, w)]
    ref = oracle.trilinear(space2, form.value, u, v, w)
    assert trilinear(form, *F) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("form", list(ConvectionForm))
def test_matrix_agrees_with_trilinear(space4, form, rng):
    for _ in range(20):
        u, v, w = random_fields(space4, 3, rng, homogeneous=False)
        N = assemble_convection(form, u, space4)
        direct = trilinear(form, u, v, w)
        assert w.coef @ (N @ v.coef) == pytest.approx(direct, rel=1e-12, abs=1e-12 * abs(direct) + 1e-14)


def test_zero_advecting_field(space4):
    assert assemble_convection("skew", space4.zero_velocity(), space4).count_nonzero() == 0


def test_convection_role_and_size(space4):
    with pytest.raises(ContractError):
        assemble_convection("emac", space4.zero_pressure(), space4)
    with pytest.raises(ContractError):
        assemble_convection("emac", np.zeros(5), space4)


def test_trilinear_space_mismatch(space4):
    other = build_taylor_hood(unit_square_mesh(4))
    with pytest.raises(ContractError):
        trilinear("skew", space4.zero_velocity(), space4.zero_velocity(), other.zero_velocity())
    with pytest.raises(ContractError):
        trilinear("skew", space4.zero_velocity(), space4.zero_velocity(), np.zeros(space4.n_vel))


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_skew_matrix_nullity(seed):
    space = build_taylor_hood(unit_square_mesh(3))
    w, v = random_fields(space, 2, np.random.default_rng(seed))
    N = assemble_convection("skew", w, space)
    assert abs(v.coef @ (N @ v.coef)) <= 1e-11 * h1_norm(w) * h1_norm(v) ** 2


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_emac_nullity(seed):
    space = build_taylor_hood(unit_square_mesh(3))
    (v,) = random_fields(space, 1, np.random.default_rng(seed))
    N = assemble_convection("emac", v, space)
    assert abs(v.coef @ (N @ v.coef)) <= 1e-11 * h1_norm(v) ** 3


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_emac_pointwise_identity(seed):
    space = build_taylor_hood(unit_square_mesh(3))
    (u,) = random_fields(space, 1, np.random.default_rng(seed), homogeneous=False)
    assert emac_identity_residual(space, u.coef) <= 1e-12


def test_form_difference_identity(space4, rng):
    """b_skew(u,u,w) - b_emac(u,u,w) = -((w.grad)u, u) - 1/2 ((div u) u, w)."""
    u, w = (rng.standard_normal(space4.n_vel) for _ in range(2))
    U, W = FeFunction(space4, VELOCITY, u), FeFunction(space4, VELOCITY, w)
    diff = trilinear("skew", U, U, W) - trilinear("emac", U, U, W)

    def grad_term(t, pts):
        uv, ug = oracle.field_at(space4, u, t, pts)
        wv, _ = oracle.field_at(space4, w, t, pts)
        return np.einsum("qd,qcd,qc->q", wv, ug, uv)

    def div_term(t, pts):
        uv, ug = oracle.field_at(space4, u, t, pts)
        wv, _ = oracle.field_at(space4, w, t, pts)
        return (ug[:, 0, 0] + ug[:, 1, 1]) * np.sum(uv * wv, axis=-1)

    ref = -oracle.element_loop(space4, grad_term) - 0.5 * oracle.element_loop(space4, div_term)
    assert diff == pytest.approx(ref, rel=1e-11)


@pytest.mark.parametrize("form", list(ConvectionForm))
def test_degree_five_is_exact(space4, form, rng):
    u, v, w = random_fields(space4, 3, rng, homogeneous=False)
    assert trilinear(form, u, v, w, degree=7) == pytest.approx(trilinear(form, u, v, w, degree=5), rel=1e-12)


# ---------------------------------------------------------------------------
# norms and projections
# ---------------------------------------------------------------------------

def test_norm_of_zero(space4):
    for kind in ("l2", "h1_semi", "div"):
        assert norm(kind, space4.zero_velocity()) == 0.0


def test_div_norm_on_pressure(space4):
    with pytest.raises(ContractError):
        norm("div", space4.zero_pressure())
    with pytest.raises(UnsupportedError):
        norm("h2", space4.zero_velocity())


def test_div_bounded_by_gradient(space4, rng):
    for f in random_fields(space4, 50, rng, homogeneous=False):
        assert norm("div", f) <= norm("h1_semi", f) * (1 + 1e-14)


def test_norms_match_matrices(space4, rng):
    (f,) = random_fields(space4, 1, rng, homogeneous=False)
    for kind, mat in (("l2", FormKind.MASS), ("h1_semi", FormKind.STIFFNESS), ("div", FormKind.GRADDIV)):
        assert norm(kind, f) ** 2 == pytest.approx(f.coef @ (assemble_matrix(mat, space4) @ f.coef), rel=1e-12)
    assert inner(f, f) == pytest.approx(norm("l2", f) ** 2, rel=1e-13)


def test_l2_norm_limit():
    space = build_taylor_hood(unit_square_mesh(32))
    u = interpolate(space, VELOCITY, lambda x, y: (np.sin(np.pi * x) * np.sin(np.pi * y), 0 * x))
    assert norm("l2", u) == pytest.approx(0.5, abs=1e-4)


def test_pressure_norms(space4):
    p = interpolate(space4, PRESSURE, lambda x, y: x)
    assert norm("l2", p) == pytest.approx(np.sqrt(1 / 3), rel=1e-13)
    assert norm("h1_semi", p) == pytest.approx(1.0, rel=1e-13)


def test_load_vector_of_constant(space4):
    b = load_vector(space4, lambda x, y: (1.0 + 0 * x, 0 * y))
    assert b[0::2].sum() == pytest.approx(1.0, abs=1e-13)
    assert np.all(b[1::2] == 0)


def test_projection_of_linear(space4):
    assert pressure_space_projection_error(space4, lambda x, y: 2 * x - y + 1) <= 1e-12


def test_projection_order_two():
    errs = [pressure_space_projection_error(build_taylor_hood(unit_square_mesh(n)), lambda x, y: x ** 2)
            for n in (8, 16, 32)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 2) < 0.05), rates
