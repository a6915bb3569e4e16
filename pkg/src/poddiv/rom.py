"""POD-Galerkin reduced model.

With ``u = m + sum_j a_j phi_j`` (``m`` the centering mean, or zero), the
reduced momentum equation tested with ``phi_k`` reads

    D_t a + nu (A a + A_m) + mu (G a + G_m) + c_m + L_u a + L_w w
        + T(w, a) = F g(t)

where ``w`` is the frozen (Picard) or extrapolated (BDF2) coefficient
vector in the advecting slot, ``T(w, a)_k = sum_ij w_i a_j T[i, j, k]``
and ``T[i, j, k] = b(phi_i, phi_j, phi_k)``. Every array is ``r``-sized,
so time stepping never touches finite element data.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .assembly import DEFAULT_DEGREE, ConvectionForm, FormKind, assemble_matrix
from .errors import ConfigError, DimensionError, StepError
from .fom import Scheme
from .pod import PODBasis, lift
from .problems import Forcing

__all__ = [
    "ReducedSystem",
    "RomConfig",
    "RomTrajectory",
    "reduce_operators",
    "rom_step",
    "rom_run",
    "lift",
    "convection_field",
]


def convection_field(form: ConvectionForm, uv, ug, vv, vg):
    """Pointwise vector ``z`` with ``b(u, v, w) = int z . w``.

    ``uv``/``vv`` are values ``(..., P, 2)`` and ``ug``/``vg`` gradients
    ``(..., P, 2, 2)``; leading axes broadcast.
    """
    divu = ug[..., 0, 0] + ug[..., 1, 1]
    if ConvectionForm(form) is ConvectionForm.SKEW:
        return np.einsum("...cd,...d->...c", vg, uv) + 0.5 * divu[..., None] * vv
    sym = ug + np.swapaxes(ug, -1, -2)
    return np.einsum("...cd,...d->...c", sym, vv) + divu[..., None] * vv


@dataclass
class ReducedSystem:
    """Precomputed reduced operators for one basis and convection form.

    Shift terms (``A_m``, ``G_m``, ``c_m``, ``L_u``, ``L_w`` and the mean
    moments) are zero for an uncentered basis.
    """

    r: int
    form: ConvectionForm
    A: np.ndarray
    G: np.ndarray
    T: np.ndarray
    forcing_vectors: np.ndarray
    A_m: np.ndarray
    G_m: np.ndarray
    c_m: np.ndarray
    L_u: np.ndarray
    L_w: np.ndarray
    mean_mass: np.ndarray
    mean_norm2: float
    mean_div: np.ndarray
    mean_div2: float
    forcing: Forcing | None = field(default=None, repr=False)

    def __post_init__(self):
        self.form = ConvectionForm(self.form)
        r = self.r
        for name in ("A", "G", "L_u", "L_w"):
            if getattr(self, name).shape != (r, r):
                raise DimensionError(f"{name} must be {r}x{r}")
        if self.T.shape != (r, r, r):
            raise DimensionError(f"T must be {r}x{r}x{r}")
        self.forcing_vectors = np.asarray(self.forcing_vectors, dtype=np.float64).reshape(-1, r)

    @property
    def centered(self) -> bool:
        return bool(self.mean_norm2 > 0 or np.any(self.L_u) or np.any(self.c_m))

    def force(self, t: float) -> np.ndarray:
        if self.forcing is None or len(self.forcing_vectors) == 0:
            return np.zeros(self.r)
        return self.forcing.time_factors(t) @ self.forcing_vectors

    def convection_matrix(self, w: np.ndarray) -> np.ndarray:
        """``N[k, j] = sum_i w_i T[i, j, k]``."""
        return np.einsum("i,ijk->kj", w, self.T)

    def energy(self, a: np.ndarray) -> float:
        """Kinetic energy of the lifted field ``1/2 ||m + Phi a||^2``."""
        return 0.5 * (self.mean_norm2 + 2 * self.mean_mass @ a + a @ a)

    def div_norm(self, a: np.ndarray) -> float:
        """``||div(m + Phi a)||_0`` from reduced moments."""
        return float(np.sqrt(max(self.mean_div2 + 2 * self.mean_div @ a + a @ self.G @ a, 0.0)))


ROUNDOFF_SLACK = 100.0


def _mode_data(space, vectors, degree):
    """Values ``(n, P, 2)`` and gradients ``(n, P, 2, 2)`` for the columns of ``vectors``."""
    vals, grads = [], []
    for c in vectors.T:
        v, g = space.velocity_at_quad(c, degree)
        vals.append(v.reshape(-1, 2))
        grads.append(g.reshape(-1, 2, 2))
    return np.array(vals), np.array(grads)


def reduce_operators(basis: PODBasis, form, forcing: Forcing | None = None,
                     degree: int = DEFAULT_DEGREE, workers: int = 1) -> ReducedSystem:
    """Project every form onto the basis.

    The tensor is built slice by slice in the first argument; slices are
    independent and run on ``workers`` threads.
    """
    form = ConvectionForm(form)
    space = basis.space
    Phi = basis.modes
    r = basis.r
    A = assemble_matrix(FormKind.STIFFNESS, space)
    G = assemble_matrix(FormKind.GRADDIV, space)
    M = assemble_matrix(FormKind.MASS, space)
    wq = space.quad(degree).wdet.ravel()
    vals, grads = _mode_data(space, Phi, degree)
    tests = vals * wq[None, :, None]
    tests_flat = tests.reshape(r, -1)

    def slice_i(i):
        z = convection_field(form, vals[i], grads[i], vals, grads)
        return z.reshape(r, -1) @ tests_flat.T

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            T = np.array(list(pool.map(slice_i, range(r))))
    else:
        T = np.array([slice_i(i) for i in range(r)])

    Ar = Phi.T @ (A @ Phi)
    Gr = Phi.T @ (G @ Phi)
    Ar, Gr = 0.5 * (Ar + Ar.T), 0.5 * (Gr + Gr.T)

    zeros_r, zeros_rr = np.zeros(r), np.zeros((r, r))
    A_m, G_m, c_m, L_u, L_w = zeros_r, zeros_r, zeros_r, zeros_rr, zeros_rr
    mean_mass, mean_norm2, mean_div, mean_div2 = zeros_r, 0.0, zeros_r, 0.0
    if basis.mean is not None:
        m = basis.mean
        mv, mg = _mode_data(space, m[:, None], degree)
        mv, mg = mv[0], mg[0]
        A_m = Phi.T @ (A @ m)
        G_m = Phi.T @ (G @ m)
        c_m = tests_flat @ convection_field(form, mv, mg, mv, mg).ravel()
        L_u = (convection_field(form, mv, mg, vals, grads).reshape(r, -1) @ tests_flat.T).T
        L_w = (convection_field(form, vals, grads, mv, mg).reshape(r, -1) @ tests_flat.T).T
        mean_mass = Phi.T @ (M @ m)
        mean_norm2 = float(m @ (M @ m))
        mean_div = Phi.T @ (G @ m)
        mean_div2 = float(m @ (G @ m))

    if forcing is not None and not forcing.is_zero:
        F = np.array([Phi.T @ b for b in forcing.term_loads(space, degree)])
    else:
        F = np.zeros((0, r))
    return ReducedSystem(r, form, Ar, Gr, T, F, A_m, G_m, c_m, L_u, L_w,
                         mean_mass, mean_norm2, mean_div, mean_div2, forcing)


def _operator(sys: ReducedSystem, nu, mu, mass_factor, w):
    K = mass_factor * np.eye(sys.r) + nu * sys.A + mu * sys.G + sys.L_u + sys.convection_matrix(w)
    rhs_shift = -(nu * sys.A_m + mu * sys.G_m + sys.c_m + sys.L_w @ w)
    return K, rhs_shift


def rom_step(a_prev, sys: ReducedSystem, scheme, dt: float, nu: float, mu: float, t_n: float,
             a_prev2=None, picard_tol: float = 1e-12, picard_max_iters: int = 50) -> np.ndarray:
    """Advance the reduced coefficients to ``t_n``.

    Implicit Euler iterates on the frozen advecting slot until the
    increment satisfies ``||da|| <= picard_tol * max(1, ||a||)``, or
    stops decreasing within ``ROUNDOFF_SLACK`` times that bound. BDF2
    extrapolates the advecting slot from ``a_prev`` and ``a_prev2`` and
    falls back to implicit Euler when ``a_prev2`` is missing.
    """
    a_prev = np.asarray(a_prev, dtype=np.float64)
    if a_prev.shape != (sys.r,):
        raise DimensionError(f"expected {sys.r} coefficients, got {a_prev.shape}")
    scheme = Scheme(scheme)
    f = sys.force(t_n)
    if scheme is Scheme.BDF2 and a_prev2 is not None:
        w = 2 * a_prev - a_prev2
        K, shift = _operator(sys, nu, mu, 1.5 / dt, w)
        return np.linalg.solve(K, (4 * a_prev - a_prev2) / (2 * dt) + f + shift)
    w = a_prev
    inc = np.inf
    for _ in range(picard_max_iters):
        K, shift = _operator(sys, nu, mu, 1.0 / dt, w)
        lu = sla.lu_factor(K)
        a = sla.lu_solve(lu, a_prev / dt + f + shift)
        prev, inc = inc, float(np.linalg.norm(a - w))
        w = a
        if not np.all(np.isfinite(a)):
            break
        tol = picard_tol * max(1.0, float(np.linalg.norm(a)))
        # stagnation just above the tolerance is roundoff in the dense solve
        if inc <= tol or (inc >= prev and inc <= ROUNDOFF_SLACK * tol):
            return a
    raise StepError(f"reduced Picard iteration did not converge at t = {t_n:.6g}", inc)


@dataclass(frozen=True)
class RomConfig:
    """Online settings: ``steps`` steps of size ``dt`` starting at ``t0``."""

    dt: float
    steps: int
    nu: float
    mu: float = 0.05
    t0: float = 0.0
    scheme: Scheme = Scheme.BDF2
    picard_tol: float = 1e-12
    picard_max_iters: int = 50

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.dt > 0 or self.steps < 0:
            raise ConfigError("ROM needs dt > 0 and steps >= 0")
        if self.nu < 0 or self.mu < 0:
            raise ConfigError("nu and mu must be nonnegative")


@dataclass
class RomTrajectory:
    """Reduced coefficients at ``steps + 1`` times, with energy and divergence series."""

    times: np.ndarray
    coeffs: np.ndarray
    energy: np.ndarray
    div_norm: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.times)


def rom_run(sys: ReducedSystem, cfg: RomConfig, a0, a1=None) -> RomTrajectory:
    """Integrate from ``a0`` at ``cfg.t0``.

    For BDF2 an optional ``a1`` supplies the state at ``t0 + dt`` (for
    example a second projected snapshot); otherwise the first step uses
    implicit Euler.
    """
    if sys.r < 1:
        raise ConfigError("reduced dimension must be >= 1")
    a0 = np.asarray(a0, dtype=np.float64)
    if a0.shape != (sys.r,):
        raise DimensionError(f"initial coefficients need length {sys.r}")
    coeffs = np.zeros((cfg.steps + 1, sys.r))
    coeffs[0] = a0
    start = 1
    if a1 is not None and cfg.steps >= 1:
        coeffs[1] = np.asarray(a1, dtype=np.float64)
        start = 2
    for n in range(start, cfg.steps + 1):
        prev2 = coeffs[n - 2] if n >= 2 else None
        coeffs[n] = rom_step(coeffs[n - 1], sys, cfg.scheme, cfg.dt, cfg.nu, cfg.mu,
                             cfg.t0 + n * cfg.dt, prev2, cfg.picard_tol, cfg.picard_max_iters)
    times = cfg.t0 + cfg.dt * np.arange(cfg.steps + 1)
    energy = np.array([sys.energy(a) for a in coeffs])
    div = np.array([sys.div_norm(a) for a in coeffs])
    meta = {"form": sys.form.value, "nu": cfg.nu, "mu": cfg.mu, "dt": cfg.dt,
            "scheme": cfg.scheme.value, "r": sys.r}
    return RomTrajectory(times, coeffs, energy, div, meta)
