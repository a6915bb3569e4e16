"""Finite element forms on Taylor-Hood spaces.

Matrices are ``scipy.sparse.csr_matrix`` with sorted column indices.
Trilinear convection forms, for velocity fields ``u, v, w``:

* skew: ``((u . grad) v, w) + 1/2 ((div u) v, w)``
* emac: ``(2 D(u) v, w) + ((div u) v, w)``, ``D(u) = sym grad u``

``assemble_convection(form, w)`` returns the matrix ``N`` with
``N[i, j] = b(w, phi_j, phi_i)``, so ``N @ u`` tests ``b(w, u, .)``.
"""

from __future__ import annotations

import enum
import weakref

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ContractError, UnsupportedError
from .fespace import PRESSURE, VELOCITY, FeFunction, THSpace

__all__ = [
    "FormKind",
    "ConvectionForm",
    "assemble_matrix",
    "assemble_convection",
    "trilinear",
    "norm",
    "inner",
    "load_vector",
    "pressure_space_projection_error",
    "DEFAULT_DEGREE",
]

DEFAULT_DEGREE = 5
_I2 = np.eye(2)


class FormKind(str, enum.Enum):
    MASS = "mass"
    STIFFNESS = "stiffness"
    GRADDIV = "graddiv"
    DIVERGENCE = "divergence"


class ConvectionForm(str, enum.Enum):
    SKEW = "skew"
    EMAC = "emac"


_matrix_cache: "weakref.WeakKeyDictionary[THSpace, dict]" = weakref.WeakKeyDictionary()


def _scatter(rows, cols, vals, shape):
    mat = sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _scatter_vel(space, local):
    dofs = space.cell_vel_dofs
    rows = np.repeat(dofs[:, :, None], 12, axis=2)
    cols = np.repeat(dofs[:, None, :], 12, axis=1)
    return _scatter(rows, cols, local, (space.n_vel, space.n_vel))


def _componentwise(scalar_local):
    t = len(scalar_local)
    return np.einsum("tab,cd->tacbd", scalar_local, _I2).reshape(t, 12, 12)


def assemble_matrix(kind, space: THSpace, degree: int = DEFAULT_DEGREE):
    """Assemble one of the linear-in-each-argument forms.

    ``mass``: (u, v); ``stiffness``: (grad u, grad v); ``graddiv``:
    (div u, div v); ``divergence``: ``B[i, j] = (q_i, div phi_j)`` of
    shape ``(n_pre, n_vel)``. Physical factors are applied by callers.
    Results are cached per space and must not be modified.
    """
    kind = FormKind(kind)
    cache = _matrix_cache.setdefault(space, {})
    key = (kind, degree)
    if key in cache:
        return cache[key]
    q = space.quad(degree)
    if kind is FormKind.MASS:
        local = _componentwise(np.einsum("tq,qa,qb->tab", q.wdet, q.N, q.N))
        mat = _scatter_vel(space, local)
    elif kind is FormKind.STIFFNESS:
        local = _componentwise(np.einsum("tq,tqai,tqbi->tab", q.wdet, q.dN, q.dN))
        mat = _scatter_vel(space, local)
    elif kind is FormKind.GRADDIV:
        local = np.einsum("tq,tqac,tqbd->tacbd", q.wdet, q.dN, q.dN).reshape(-1, 12, 12)
        mat = _scatter_vel(space, local)
    else:
        local = np.einsum("tq,qi,tqbd->tibd", q.wdet, q.L, q.dN).reshape(-1, 3, 12)
        rows = np.repeat(space.mesh.triangles[:, :, None], 12, axis=2)
        cols = np.repeat(space.cell_vel_dofs[:, None, :], 3, axis=1)
        mat = _scatter(rows, cols, local, (space.n_pre, space.n_vel))
    cache[key] = mat
    return mat


def pressure_mass(space: THSpace, degree: int = 2):
    """P1 mass matrix ``(p_i, p_j)``."""
    cache = _matrix_cache.setdefault(space, {})
    key = ("pmass", degree)
    if key not in cache:
        q = space.quad(degree)
        local = np.einsum("tq,qa,qb->tab", q.wdet, q.L, q.L)
        tri = space.mesh.triangles
        rows = np.repeat(tri[:, :, None], 3, axis=2)
        cols = np.repeat(tri[:, None, :], 3, axis=1)
        cache[key] = _scatter(rows, cols, local, (space.n_pre, space.n_pre))
    return cache[key]


def _velocity_coef(f, space=None):
    if isinstance(f, FeFunction):
        f.require(VELOCITY, space)
        return f.coef
    return np.asarray(f, dtype=np.float64)


def assemble_convection(form, w, space: THSpace, degree: int = DEFAULT_DEGREE):
    """Convection matrix ``N(w)`` linearized in the advected argument."""
    form = ConvectionForm(form)
    if isinstance(w, FeFunction):
        w.require(VELOCITY, space)
    coef = _velocity_coef(w)
    if coef.shape != (space.n_vel,):
        raise ContractError(f"advecting field needs {space.n_vel} coefficients")
    q = space.quad(degree)
    wv, wg = space.velocity_at_quad(coef, degree)
    divw = wg[..., 0, 0] + wg[..., 1, 1]
    if form is ConvectionForm.SKEW:
        adv = np.einsum("tqd,tqbd->tqb", wv, q.dN) + 0.5 * divw[..., None] * q.N[None]
        local = _componentwise(np.einsum("tq,qa,tqb->tab", q.wdet, q.N, adv))
    else:
        S = wg + np.swapaxes(wg, 2, 3) + divw[..., None, None] * _I2
        local = np.einsum("tq,qa,qb,tqcd->tacbd", q.wdet, q.N, q.N, S).reshape(-1, 12, 12)
    return _scatter_vel(space, local)


def trilinear(form, u, v, w, degree: int = DEFAULT_DEGREE) -> float:
    """Evaluate ``b_form(u, v, w)`` by direct quadrature of the pointwise integrand."""
    form = ConvectionForm(form)
    for f in (u, v, w):
        if not isinstance(f, FeFunction):
            raise ContractError("trilinear expects FeFunction arguments")
        f.require(VELOCITY)
    space = u.space
    if v.space is not space or w.space is not space:
        raise ContractError("trilinear arguments live on different spaces")
    q = space.quad(degree)
    uv, ug = space.velocity_at_quad(u.coef, degree)
    vv, vg = space.velocity_at_quad(v.coef, degree)
    wv, _ = space.velocity_at_quad(w.coef, degree)
    divu = ug[..., 0, 0] + ug[..., 1, 1]
    vw = np.sum(vv * wv, axis=-1)
    if form is ConvectionForm.SKEW:
        conv = np.einsum("tqcd,tqd->tqc", vg, uv)
        integrand = np.sum(conv * wv, axis=-1) + 0.5 * divu * vw
    else:
        sym = ug + np.swapaxes(ug, 2, 3)
        integrand = np.einsum("tqcd,tqd,tqc->tq", sym, vv, wv) + divu * vw
    return float(np.sum(q.wdet * integrand))


def norm(kind: str, f: FeFunction, degree: int = DEFAULT_DEGREE) -> float:
    """``l2``, ``h1_semi`` or ``div`` norm of an FE function by quadrature."""
    q = f.space.quad(degree)
    if f.role == VELOCITY:
        val, grad = f.space.velocity_at_quad(f.coef, degree)
        if kind == "l2":
            dens = np.sum(val ** 2, axis=-1)
        elif kind == "h1_semi":
            dens = np.sum(grad ** 2, axis=(-1, -2))
        elif kind == "div":
            dens = (grad[..., 0, 0] + grad[..., 1, 1]) ** 2
        else:
            raise UnsupportedError(f"unknown norm kind {kind!r}")
    else:
        if kind == "div":
            raise ContractError("divergence norm is undefined for pressure functions")
        val, grad = f.space.pressure_at_quad(f.coef, degree)
        if kind == "l2":
            dens = val ** 2
        elif kind == "h1_semi":
            dens = np.sum(grad ** 2, axis=-1)
        else:
            raise UnsupportedError(f"unknown norm kind {kind!r}")
    return float(np.sqrt(np.sum(q.wdet * dens)))


def inner(u: FeFunction, v: FeFunction, degree: int = DEFAULT_DEGREE) -> float:
    """L2 inner product of two velocity functions by quadrature."""
    u.require(VELOCITY)
    v.require(VELOCITY, u.space)
    q = u.space.quad(degree)
    a, _ = u.space.velocity_at_quad(u.coef, degree)
    b, _ = u.space.velocity_at_quad(v.coef, degree)
    return float(np.sum(q.wdet * np.sum(a * b, axis=-1)))


def load_vector(space: THSpace, f, degree: int = DEFAULT_DEGREE) -> np.ndarray:
    """Right-hand side ``(f, phi_i)`` for ``f(x, y) -> (fx, fy)``."""
    q = space.quad(degree)
    x, y = q.points[..., 0], q.points[..., 1]
    fx, fy = f(x, y)
    fq = np.stack([np.broadcast_to(fx, x.shape), np.broadcast_to(fy, x.shape)], axis=-1)
    local = np.einsum("tq,qa,tqc->tac", q.wdet, q.N, fq).reshape(-1, 12)
    out = np.zeros(space.n_vel)
    np.add.at(out, space.cell_vel_dofs, local)
    return out


def pressure_space_projection_error(space: THSpace, g, degree: int = 7) -> float:
    """``||(I - P_Q) g||_0`` for the L2 projection onto the P1 pressure space.

    ``g(x, y)`` is evaluated at quadrature points of the given degree.
    """
    q = space.quad(degree)
    x, y = q.points[..., 0], q.points[..., 1]
    gq = np.broadcast_to(g(x, y), x.shape)
    rhs = np.zeros(space.n_pre)
    np.add.at(rhs, space.mesh.triangles, np.einsum("tq,qa,tq->ta", q.wdet, q.L, gq))
    coef = splu(pressure_mass(space).tocsc()).solve(rhs)
    proj = np.einsum("qa,ta->tq", q.L, coef[space.mesh.triangles])
    return float(np.sqrt(np.sum(q.wdet * (gq - proj) ** 2)))

