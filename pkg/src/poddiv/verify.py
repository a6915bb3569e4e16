"""Invariant checks run by ``poddiv verify`` and the acceptance tests.

Each suite returns a list of :class:`Check` records holding the measured
residual, its limit and the verdict. The building blocks are public so
tests can run them at other sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import accumulate, energy_balance_residual, error_series
from .assembly import ConvectionForm, FormKind, assemble_matrix, norm, trilinear
from .fespace import VELOCITY, FeFunction, THSpace, build_taylor_hood, p2_basis
from .linsolve import sym_eig
from .fom import FomConfig, Scheme, SnapshotSet, fom_run
from .mesh import quadrature_rule, unit_square_mesh
from .pod import PODBasis, PodConfig, build_basis, mass_product, pod_stiffness
from .problems import DESK, DeskProblem, ManufacturedSolution, desk_forcing
from .rom import ReducedSystem, RomConfig, reduce_operators, rom_run

__all__ = [
    "Check",
    "SUITES",
    "DESK_NU",
    "DESK_MU",
    "DESK_DT",
    "desk_config",
    "desk_ensemble",
    "random_fields",
    "h1_norm",
    "nullity_residuals",
    "emac_identity_residual",
    "projection_identity_error",
    "orthonormality_error",
    "inverse_inequality_slack",
    "fom_energy_residuals",
    "rom_energy_residuals",
    "energy_increase",
    "manufactured_convergence",
    "observed_orders",
    "RankSweep",
    "rank_sweep",
    "monotone_violation",
    "loglog_slope",
    "nested_prolongation",
]

DESK_NU = 0.01
DESK_MU = 10.0
DESK_DT = 0.01


@dataclass(frozen=True)
class Check:
    """One measured residual against its limit.

    ``upper`` checks pass when ``value <= limit``; otherwise when
    ``value >= limit``.
    """

    name: str
    value: float
    limit: float
    upper: bool = True

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value <= self.limit if self.upper else self.value >= self.limit


# ---------------------------------------------------------------------------
# problem set-up
# ---------------------------------------------------------------------------

def desk_config(T: float, window=None, mu: float = DESK_MU, nu: float = DESK_NU, dt: float = DESK_DT,
                scheme=Scheme.IMPLICIT_EULER, problem: DeskProblem = DESK, **kw) -> FomConfig:
    """FOM settings for the forced oscillatory flow in the unit square."""
    return FomConfig(nu=nu, dt=dt, T=T, mu=mu, scheme=scheme, forcing=desk_forcing(problem),
                     window=window, **kw)


def desk_ensemble(space: THSpace, count: int, mu: float = DESK_MU, dt: float = DESK_DT) -> SnapshotSet:
    """Snapshots at steps ``1..count`` of the desk flow started from rest."""
    cfg = desk_config(T=count * dt, window=(dt, count * dt), mu=mu, dt=dt)
    return fom_run(cfg, space).snapshots


def random_fields(space: THSpace, count: int, rng: np.random.Generator,
                  homogeneous: bool = True) -> list[FeFunction]:
    """Velocity fields with standard normal coefficients."""
    out = []
    for _ in range(count):
        c = rng.standard_normal(space.n_vel)
        if homogeneous:
            c = space.apply_dirichlet(c, homogeneous=True)
        out.append(FeFunction(space, VELOCITY, c))
    return out


def h1_norm(f: FeFunction) -> float:
    return float(np.hypot(norm("l2", f), norm("h1_semi", f)))


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------

def nullity_residuals(space: THSpace, count: int = 50, seed: int = 0) -> tuple[float, float]:
    """Largest ``|b_skew(u, v, v)| / (|u|_1 |v|_1^2)`` and ``|b_emac(v, v, v)| / |v|_1^3``."""
    rng = np.random.default_rng(seed)
    us = random_fields(space, count, rng)
    vs = random_fields(space, count, rng)
    skew = emac = 0.0
    for u, v in zip(us, vs):
        nu_, nv = h1_norm(u), h1_norm(v)
        skew = max(skew, abs(trilinear(ConvectionForm.SKEW, u, v, v)) / (nu_ * nv ** 2))
        emac = max(emac, abs(trilinear(ConvectionForm.EMAC, v, v, v)) / nv ** 3)
    return skew, emac


def _p2_values(lam: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points ``(..., 3)`` of any dtype."""
    l0, l1, l2 = lam[..., 0], lam[..., 1], lam[..., 2]
    return np.stack([l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
                     4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0], axis=-1)


def _grad_speed_squared(space: THSpace, coef, degree: int, step: float = 1e-30) -> np.ndarray:
    """``grad |u|^2`` at quadrature points by complex-step differentiation.

    Evaluates each element polynomial at ``x + i h e_d`` without going
    through the gradient tables, so it is independent of the chain rule.
    """
    _, _, _, Jinv = space._geometry
    bary = quadrature_rule(degree).points
    dref = Jinv                                   # d(lambda_1, lambda_2) / dx, (T, 2, 2)
    dlam = np.concatenate([-dref.sum(axis=1, keepdims=True), dref], axis=1)   # (T, 3, 2)
    ue = np.asarray(coef)[space.cell_vel_dofs].reshape(-1, 6, 2)
    out = np.empty((len(ue), len(bary), 2))
    for d in range(2):
        lam = bary[None, :, :] + 1j * step * dlam[:, None, :, d]
        val = np.einsum("tqa,tac->tqc", _p2_values(lam), ue)
        out[..., d] = np.sum(val * val, axis=-1).imag / step
    return out


def emac_identity_residual(space: THSpace, coef, degree: int = 5) -> float:
    """Largest pointwise ``|(u.grad)u - 2 D(u) u + grad|u|^2 / 2|`` over ``max |u| |grad u|``."""
    val, grad = space.velocity_at_quad(coef, degree)
    conv = np.einsum("tqcd,tqd->tqc", grad, val)
    sym = np.einsum("tqcd,tqd->tqc", grad + np.swapaxes(grad, -1, -2), val)
    res = conv - sym + 0.5 * _grad_speed_squared(space, coef, degree)
    scale = np.max(np.linalg.norm(val, axis=-1)) * np.max(np.linalg.norm(grad, axis=(-1, -2)))
    return float(np.max(np.linalg.norm(res, axis=-1)) / scale)


# ---------------------------------------------------------------------------
# pod
# ---------------------------------------------------------------------------

def projection_identity_error(snaps: SnapshotSet, basis: PODBasis) -> float:
    """Largest relative gap between the mean squared projection error and ``Lambda_r``, ``r <= d_v``.

    Residual fields are formed explicitly and their mass norms are
    accumulated in extended precision.
    """
    M = assemble_matrix(FormKind.MASS, snaps.space)
    U = (snaps.vectors - basis.offset()).T
    worst = 0.0
    for r in range(1, basis.d_v + 1):
        Phi = basis.all_modes[:, :r]
        E = (U - Phi @ (Phi.T @ (M @ U))).astype(np.longdouble)
        err = float(np.sum(E * mass_product(M, E)) / len(snaps))
        tail = basis.tails[r]
        worst = max(worst, abs(err - tail) / tail if tail > 0 else abs(err))
    return worst


def orthonormality_error(basis: PODBasis) -> float:
    M = assemble_matrix(FormKind.MASS, basis.space)
    P = basis.all_modes
    return float(np.max(np.abs(P.T @ (M @ P) - np.eye(P.shape[1]))))


def inverse_inequality_slack(basis: PODBasis, count: int = 50, seed: int = 0) -> float:
    """Smallest ``(sqrt(S_2) |v|_0 - |grad v|_0) / (sqrt(S_2) |v|_0)``.

    Samples ``count`` random ``v`` in the span plus the maximizing direction.
    """
    S, s2 = pod_stiffness(basis)
    rng = np.random.default_rng(seed)
    coeffs = [rng.standard_normal(basis.r) for _ in range(count)]
    coeffs.append(sym_eig(S).vectors[:, 0])      # the direction where the bound is attained
    worst = np.inf
    for a in coeffs:
        v = FeFunction(basis.space, VELOCITY, basis.modes @ a)
        bound = np.sqrt(s2) * norm("l2", v)
        worst = min(worst, (bound - norm("h1_semi", v)) / bound)
    return float(worst)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def fom_energy_residuals(space: THSpace, cfg: FomConfig) -> np.ndarray:
    """Relative implicit-Euler energy residual of every FOM step."""
    res = fom_run(cfg, space, keep_states=True)
    M = assemble_matrix(FormKind.MASS, space)
    A = assemble_matrix(FormKind.STIFFNESS, space)
    G = assemble_matrix(FormKind.GRADDIV, space)
    out = []
    for prev, cur in zip(res.states, res.states[1:]):
        load = cfg.forcing.load(space, cur.t)
        out.append(energy_balance_residual(cur.u, prev.u, M, A, G, load, cfg.nu, cfg.mu, cfg.dt).relative)
    return np.array(out)


def rom_energy_residuals(sys: ReducedSystem, cfg: RomConfig, a0) -> np.ndarray:
    """Relative energy residual of every reduced implicit-Euler step (uncentered basis)."""
    traj = rom_run(sys, cfg, a0)
    eye = np.eye(sys.r)
    out = []
    for n in range(1, len(traj)):
        out.append(energy_balance_residual(traj.coeffs[n], traj.coeffs[n - 1], eye, sys.A, sys.G,
                                           sys.force(traj.times[n]), cfg.nu, cfg.mu, cfg.dt).relative)
    return np.array(out)


def energy_increase(sys: ReducedSystem, cfg: RomConfig, a0) -> float:
    """Largest step-to-step growth of reduced kinetic energy over the initial energy."""
    traj = rom_run(sys, cfg, a0)
    return float(np.max(np.diff(traj.energy)) / traj.energy[0])


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------

def manufactured_convergence(sizes=(8, 16, 32), dt: float = 1e-3, T: float = 0.25, nu: float = 1.0,
                             mu: float = 0.05, scheme=Scheme.BDF2) -> dict:
    """Per mesh size: largest L2 velocity error over time and ``sum dt |div u_h|^2``.

    The exact velocity is divergence free, so the second entry equals
    the accumulated divergence error.
    """
    exact = ManufacturedSolution(nu)
    out = {}
    for n in sizes:
        space = build_taylor_hood(unit_square_mesh(n))
        cfg = FomConfig(nu=nu, dt=dt, T=T, mu=mu, scheme=scheme, forcing=exact.forcing(),
                        initial=exact.velocity(0.0), exact=exact)
        s = fom_run(cfg, space).series
        out[n] = (float(np.max(s.err_l2)), accumulate(s.div_norm, dt))
    return out


def observed_orders(results: dict) -> np.ndarray:
    sizes = sorted(results)
    err = np.array([results[n][0] for n in sizes])
    h = 1.0 / np.array(sizes, dtype=float)
    return np.log(err[:-1] / err[1:]) / np.log(h[:-1] / h[1:])


# ---------------------------------------------------------------------------
# reduced-model error sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankSweep:
    """Reconstructive-window squared errors per convection form and rank."""

    ranks: np.ndarray
    tails: np.ndarray
    stiffness_norms: np.ndarray
    errors: dict

    def floor(self, form) -> float:
        """Error with every POD mode kept: what the reduced space cannot resolve."""
        return float(self.errors[ConvectionForm(form)][-1])


def rank_sweep(snaps: SnapshotSet, forcing, nu: float, mu: float, ranks=None, forms=tuple(ConvectionForm),
               scheme=Scheme.IMPLICIT_EULER, basis: PODBasis | None = None,
               picard_max_iters: int = 50) -> RankSweep:
    """Run the reduced model from the projected first snapshot over the snapshot window.

    ``ranks`` defaults to ``1..d_v``.
    """
    basis = build_basis(snaps) if basis is None else basis
    ranks = np.arange(1, basis.d_v + 1) if ranks is None else np.asarray(ranks)
    M = assemble_matrix(FormKind.MASS, snaps.space)
    errors = {ConvectionForm(f): [] for f in forms}
    s2 = []
    for r in ranks:
        b = basis.truncate(int(r))
        s2.append(pod_stiffness(b)[1])
        cfg = RomConfig(dt=snaps.spacing, steps=len(snaps) - 1, nu=nu, mu=mu, t0=snaps.t_start, scheme=scheme,
                        picard_max_iters=picard_max_iters)
        a0 = b.modes.T @ (M @ (snaps.vectors[0] - b.offset()))
        for form in errors:
            traj = rom_run(reduce_operators(b, form, forcing), cfg, a0)
            errors[form].append(error_series(snaps, traj, b).window_sq)
    return RankSweep(ranks, basis.tails[ranks], np.array(s2), {f: np.array(e) for f, e in errors.items()})


def monotone_violation(errors: np.ndarray, floor: float, slack: float = 2.0) -> float:
    """Largest relative increase ``e[r+1] / e[r] - 1`` among steps that end above ``slack * floor``."""
    e = np.asarray(errors)
    worst = 0.0
    for a, b in zip(e[:-1], e[1:]):
        if b > slack * floor:
            worst = max(worst, b / a - 1)
    return worst


def loglog_slope(errors: np.ndarray, tails: np.ndarray, cutoff: float = 1e-20) -> float:
    """Least-squares slope of ``log e`` against ``log Lambda_r`` where ``e >= cutoff``."""
    e, t = np.asarray(errors), np.asarray(tails)
    keep = (e >= cutoff) & (t > 0)
    return float(np.polyfit(np.log(t[keep]), np.log(e[keep]), 1)[0])


def nested_prolongation(coarse: THSpace, fine: THSpace, vectors) -> np.ndarray:
    """Coarse velocity fields evaluated at the nodes of a nested refinement.

    On nested meshes the coarse P2 space is contained in the fine one, so
    nodal evaluation reproduces the coarse fields exactly.
    """
    V = coarse.mesh.vertices[coarse.mesh.triangles]
    a, e1, e2 = V[:, 0], V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]
    det = e1[:, 0] * e2[:, 1] - e2[:, 0] * e1[:, 1]
    pts = fine.node_coords
    owner = np.empty(len(pts), dtype=np.int64)
    lam = np.empty((len(pts), 3))
    for start in range(0, len(pts), 2048):
        d = pts[start:start + 2048, None, :] - a[None]
        l1 = (d[..., 0] * e2[:, 1] - d[..., 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[..., 1] - e1[:, 1] * d[..., 0]) / det
        bary = np.stack([1 - l1 - l2, l1, l2], axis=-1)
        t = np.argmax(bary.min(axis=-1), axis=1)
        owner[start:start + 2048] = t
        lam[start:start + 2048] = bary[np.arange(len(t)), t]
    N, _ = p2_basis(lam)
    vecs = np.atleast_2d(vectors)
    out = np.empty((len(vecs), fine.n_vel))
    for k, c in enumerate(vecs):
        ue = np.asarray(c)[coarse.cell_vel_dofs].reshape(-1, 6, 2)[owner]
        out[k] = np.einsum("pa,pac->pc", N, ue).ravel()
    return out


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def algebra_suite() -> list[Check]:
    space = build_taylor_hood(unit_square_mesh(4))
    skew, emac = nullity_residuals(space, 50)
    rng = np.random.default_rng(1)
    ident = max(emac_identity_residual(space, f.coef)
                for f in random_fields(space, 50, rng, homogeneous=False))
    return [Check("skew nullity b(u,v,v)", skew, 1e-11),
            Check("emac nullity b(v,v,v)", emac, 1e-11),
            Check("emac pointwise identity", ident, 1e-12)]


def pod_suite(mu: float = DESK_MU) -> list[Check]:
    space = build_taylor_hood(unit_square_mesh(16))
    snaps = desk_ensemble(space, 20, mu=mu)
    checks = []
    for centering in (False, True):
        basis = build_basis(snaps, PodConfig(centering=centering))
        tag = "centered" if centering else "uncentered"
        checks += [Check(f"projection error = tail ({tag})", projection_identity_error(snaps, basis), 1e-8),
                   Check(f"orthonormality ({tag})", orthonormality_error(basis), 1e-10),
                   Check(f"inverse inequality slack ({tag})", inverse_inequality_slack(basis), -1e-10,
                         upper=False)]
    return checks


def energy_suite(mu: float = DESK_MU) -> list[Check]:
    space = build_taylor_hood(unit_square_mesh(8))
    steps = 20
    cfg = desk_config(T=steps * DESK_DT, window=(DESK_DT, steps * DESK_DT), mu=mu)
    checks = [Check("FOM implicit Euler energy residual", float(np.max(fom_energy_residuals(space, cfg))),
                    1e-9)]
    snaps = fom_run(cfg, space).snapshots
    basis = build_basis(snaps, PodConfig(r=6))
    M = assemble_matrix(FormKind.MASS, space)
    a0 = basis.modes.T @ (M @ snaps.vectors[0])
    rcfg = RomConfig(dt=DESK_DT, steps=steps, nu=cfg.nu, mu=cfg.mu, t0=snaps.times[0],
                     scheme=Scheme.IMPLICIT_EULER)
    for form in ConvectionForm:
        sys = reduce_operators(basis, form, cfg.forcing)
        checks.append(Check(f"ROM implicit Euler energy residual ({form.value})",
                            float(np.max(rom_energy_residuals(sys, rcfg, a0))), 1e-9))
    if mu > 0:
        inviscid = RomConfig(dt=DESK_DT, steps=50, nu=0.0, mu=cfg.mu, scheme=Scheme.IMPLICIT_EULER)
        sys = reduce_operators(basis, ConvectionForm.EMAC)
        checks.append(Check("EMAC inviscid unforced energy growth", energy_increase(sys, inviscid, a0), 1e-12))
    return checks


def convergence_suite() -> list[Check]:
    res = manufactured_convergence()
    orders = observed_orders(res)
    sizes = sorted(res)
    div = np.array([res[n][1] for n in sizes])
    return [Check("L2 velocity order (worst pair)", float(orders.min()), 2.0, upper=False),
            Check("divergence error ratio (worst pair)", float(np.max(div[1:] / div[:-1])), 1.0)]


SUITES = {
    "algebra": algebra_suite,
    "pod": pod_suite,
    "energy": energy_suite,
    "convergence": convergence_suite,
}
