"""Error series, conserved quantities, energy balance and body forces.

All functions are pure: they read their inputs and return new values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import (ConvectionForm, FormKind, assemble_matrix, pressure_mass, trilinear)
from .errors import ContractError
from .fespace import PRESSURE, VELOCITY, FeFunction, THSpace
from .fom import SnapshotSet
from .linsolve import SaddleSystem, solve_saddle
from .mesh import quadrature_rule
from .pod import PODBasis

__all__ = [
    "ErrorSeries",
    "error_series",
    "accumulate",
    "l2_error_exact",
    "conserved_quantities",
    "EnergyBalance",
    "energy_balance_residual",
    "BodyForceFunctional",
    "body_force_functional",
    "drag_lift",
    "force_discrepancy",
    "emac_inconsistency",
]


def accumulate(values: np.ndarray, dt: float) -> float:
    """Discrete squared l2(L2) norm ``dt * sum_n values[n]**2`` over every listed step."""
    v = np.asarray(values, dtype=np.float64)
    return float(dt * np.sum(v * v))


@dataclass(frozen=True)
class ErrorSeries:
    """Per-step error norms and their accumulations.

    ``window_sq`` sums the steps up to ``window_end`` (reconstructive
    window), ``full_sq`` sums every step.
    """

    times: np.ndarray
    err_rom_fom: np.ndarray | None
    err_fom_exact: np.ndarray | None
    div_norm: np.ndarray
    dt: float
    window_end: float
    window_sq: float
    full_sq: float

    def columns(self) -> dict:
        n = len(self.times)
        cols = {"step": np.arange(n), "time": self.times}
        cols["err_rom_fom"] = self.err_rom_fom if self.err_rom_fom is not None else np.full(n, np.nan)
        cols["err_fom_exact"] = self.err_fom_exact if self.err_fom_exact is not None else np.full(n, np.nan)
        cols["div_norm"] = self.div_norm
        return cols


def l2_error_exact(space: THSpace, coef, exact_u, degree: int = 7) -> float:
    """``||u_h - u||_0`` evaluating the element polynomials at mapped rule points."""
    rule = quadrature_rule(degree)
    pts = space.reference_to_physical(rule.points)
    uh = space.velocity_at(coef, rule.points)
    ex, ey = exact_u(pts[..., 0], pts[..., 1])
    area2 = 2 * space.mesh.areas()
    d2 = (uh[..., 0] - ex) ** 2 + (uh[..., 1] - ey) ** 2
    return float(np.sqrt(np.sum(area2[:, None] * rule.weights[None, :] * d2)))


def _match_times(a: np.ndarray, b: np.ndarray, dt: float):
    if len(a) != len(b) or (len(a) and np.max(np.abs(a - b)) > 1e-9 * dt):
        raise ContractError("trajectories do not share the same time grid")


def error_series(snaps: SnapshotSet, rom=None, basis: PODBasis | None = None, exact=None,
                 window_end: float | None = None) -> ErrorSeries:
    """Compare a ROM trajectory and/or an analytic solution against FOM snapshots.

    Parameters
    ----------
    snaps : reference FOM fields at the comparison times
    rom : RomTrajectory, optional; must share the time grid of ``snaps``
    basis : PODBasis used to lift ``rom``
    exact : object with ``velocity(t) -> (x, y) -> (ux, uy)``, optional
    window_end : last time of the reconstructive window; defaults to the
        last snapshot time
    """
    space = snaps.space
    M = assemble_matrix(FormKind.MASS, space)
    G = assemble_matrix(FormKind.GRADDIV, space)
    dt = snaps.spacing
    times = snaps.times
    if window_end is None:
        window_end = float(times[-1]) if len(times) else 0.0
    in_window = times <= window_end + 1e-9 * dt

    err_rf = None
    fields = snaps.vectors
    if rom is not None:
        if basis is None:
            raise ContractError("a basis is needed to lift the ROM trajectory")
        _match_times(rom.times, times, dt)
        lifted = basis.offset()[None, :] + rom.coeffs @ basis.modes.T
        diff = lifted - snaps.vectors
        err_rf = np.sqrt(np.maximum(np.einsum("ij,ij->i", diff, (M @ diff.T).T), 0.0))
        fields = lifted
    div = np.sqrt(np.maximum(np.einsum("ij,ij->i", fields, (G @ fields.T).T), 0.0))

    err_ex = None
    if exact is not None:
        err_ex = np.array([l2_error_exact(space, u, exact.velocity(t)) for t, u in zip(times, snaps.vectors)])

    main = err_rf if err_rf is not None else (err_ex if err_ex is not None else np.zeros(len(times)))
    return ErrorSeries(times, err_rf, err_ex, div, dt, window_end,
                       accumulate(main[in_window], dt), accumulate(main, dt))


def conserved_quantities(f: FeFunction, degree: int = 5):
    """Kinetic energy, linear momentum and angular momentum about the origin."""
    f.require(VELOCITY)
    space = f.space
    q = space.quad(degree)
    val, _ = space.velocity_at_quad(f.coef, degree)
    x, y = q.points[..., 0], q.points[..., 1]
    energy = 0.5 * float(np.sum(q.wdet * np.sum(val ** 2, axis=-1)))
    momentum = np.array([np.sum(q.wdet * val[..., 0]), np.sum(q.wdet * val[..., 1])])
    angular = float(np.sum(q.wdet * (x * val[..., 1] - y * val[..., 0])))
    return energy, momentum, angular


@dataclass(frozen=True)
class EnergyBalance:
    """Signed per-step energy residual and the magnitude of its largest term."""

    residual: float
    scale: float
    terms: dict

    @property
    def relative(self) -> float:
        return abs(self.residual) / self.scale if self.scale > 0 else abs(self.residual)


def energy_balance_residual(u, u_prev, mass, stiffness, graddiv, load, nu: float, mu: float,
                            dt: float) -> EnergyBalance:
    """Residual of the implicit-Euler energy identity.

    ``1/2 (|u|^2 - |u_prev|^2 + |u - u_prev|^2) / dt + nu |grad u|^2
    + mu |div u|^2 - (f, u)``, with norms induced by the given matrices.
    Works for FE coefficient vectors and for reduced coefficients
    (``mass`` the identity). Nonzero in general for BDF2 steps.
    """
    u = np.asarray(u, dtype=np.float64)
    u_prev = np.asarray(u_prev, dtype=np.float64)
    d = u - u_prev

    def q(A, a):
        return float(a @ (A @ a))

    terms = {
        "kinetic": 0.5 * (q(mass, u) - q(mass, u_prev)) / dt,
        "increment": 0.5 * q(mass, d) / dt,
        "viscous": nu * q(stiffness, u),
        "graddiv": mu * q(graddiv, u),
        "forcing": -float(np.asarray(load) @ u),
    }
    scale = max(0.5 * q(mass, u) / dt, 0.5 * q(mass, u_prev) / dt,
                *(abs(v) for v in terms.values()))
    return EnergyBalance(sum(terms.values()), scale, terms)


@dataclass(frozen=True)
class BodyForceFunctional:
    """Test functions for drag and lift on an obstacle marker.

    ``projected`` test functions are discretely divergence free (Stokes
    lift of the unit direction); plain ones are the nodal lift and need
    the pressure.
    """

    drag: FeFunction
    lift: FeFunction
    marker: int
    projected: bool
    density: float = 1.0
    velocity: float = 1.0
    diameter: float = 1.0

    @property
    def factor(self) -> float:
        return 2.0 / (self.density * self.velocity ** 2 * self.diameter)


def _nodal_lift(space: THSpace, marker: int, direction):
    nodes = space.boundary_nodes(marker)
    v = np.zeros(space.n_vel)
    v[2 * nodes] = direction[0]
    v[2 * nodes + 1] = direction[1]
    return v


def _stokes_lift(space: THSpace, data):
    A = assemble_matrix(FormKind.STIFFNESS, space)
    B = assemble_matrix(FormKind.DIVERGENCE, space)
    dofs = space.dirichlet_dofs
    weights = space.pressure_weights if space.encloses else None
    u, _ = solve_saddle(SaddleSystem(A, B, np.zeros(space.n_vel), None, dofs, data[dofs], weights))
    return u


def body_force_functional(space: THSpace, marker: int, projected: bool = True, density: float = 1.0,
                          velocity: float = 1.0, diameter: float = 1.0) -> BodyForceFunctional:
    """Build drag/lift test functions equal to the unit directions on ``marker``.

    They vanish on every other Dirichlet boundary.
    """
    if marker not in space.dirichlet_markers:
        raise ContractError(f"obstacle marker {marker} carries no Dirichlet condition")
    fns = []
    for direction in ((1.0, 0.0), (0.0, 1.0)):
        v = _nodal_lift(space, marker, direction)
        if projected:
            v = _stokes_lift(space, v)
        fns.append(FeFunction(space, VELOCITY, v))
    return BodyForceFunctional(fns[0], fns[1], marker, projected, density, velocity, diameter)


def _force(u, u_prev, p, v, nu, dt, form, mu):
    space = u.space
    M = assemble_matrix(FormKind.MASS, space)
    A = assemble_matrix(FormKind.STIFFNESS, space)
    total = (u.coef - u_prev.coef) @ (M @ v.coef) / dt + nu * (u.coef @ (A @ v.coef))
    total += trilinear(form, u, u, v)
    if mu:
        total += mu * (u.coef @ (assemble_matrix(FormKind.GRADDIV, space) @ v.coef))
    if p is not None:
        B = assemble_matrix(FormKind.DIVERGENCE, space)
        total -= p.coef @ (B @ v.coef)
    return total


def drag_lift(u: FeFunction, u_prev: FeFunction, p: FeFunction | None, fun: BodyForceFunctional,
              nu: float, dt: float, form=ConvectionForm.SKEW, mu: float = 0.0):
    """Drag and lift coefficients by the volume formulation.

    ``c = -factor * [((u - u_prev)/dt, v) + nu (grad u, grad v) + b(u, u, v)
    - (p, div v)]``. The pressure term is skipped for projected test
    functions; ``mu > 0`` adds the grad-div term ``mu (div u, div v)``.
    """
    u.require(VELOCITY)
    u_prev.require(VELOCITY, u.space)
    if not fun.projected:
        if p is None:
            raise ContractError("plain test functions need the pressure")
        p.require(PRESSURE, u.space)
    pres = None if fun.projected else p
    out = []
    for v in (fun.drag, fun.lift):
        out.append(-fun.factor * _force(u, u_prev, pres, v, nu, dt, ConvectionForm(form), mu))
    return out[0], out[1]


def force_discrepancy(u: FeFunction, load, plain: BodyForceFunctional, projected: BodyForceFunctional,
                      mu: float = 0.0):
    """Predicted ``plain - projected`` coefficients for a converged FOM state.

    Both test functions share their boundary values, so their difference
    lies in the discrete test space and the momentum equation reduces the
    gap to the terms the force formula omits: the body force and, when
    ``mu`` is not passed to :func:`drag_lift`, the grad-div term.
    """
    space = u.space
    G = assemble_matrix(FormKind.GRADDIV, space)
    load = np.asarray(load, dtype=np.float64)
    out = []
    for vp, vs in ((plain.drag, projected.drag), (plain.lift, projected.lift)):
        delta = vp.coef - vs.coef
        out.append(-plain.factor * (load @ delta - mu * (u.coef @ (G @ delta))))
    return out[0], out[1]


def emac_inconsistency(u: FeFunction, degree: int = 7):
    """``(||div u||_0, ||(I - P_Q) |u|^2||_0)`` for a velocity field.

    These two quantities control how far EMAC and the skew form drift
    apart on discretely divergence-free fields.
    """
    u.require(VELOCITY)
    space = u.space
    q = space.quad(degree)
    val, grad = space.velocity_at_quad(u.coef, degree)
    div = grad[..., 0, 0] + grad[..., 1, 1]
    g = np.sum(val ** 2, axis=-1)
    rhs = np.zeros(space.n_pre)
    np.add.at(rhs, space.mesh.triangles, np.einsum("tq,qa,tq->ta", q.wdet, q.L, g))
    coef = splu(sp.csc_matrix(pressure_mass(space))).solve(rhs)
    proj = np.einsum("qa,ta->tq", q.L, coef[space.mesh.triangles])
    return (float(np.sqrt(np.sum(q.wdet * div ** 2))),
            float(np.sqrt(np.sum(q.wdet * (g - proj) ** 2))))
