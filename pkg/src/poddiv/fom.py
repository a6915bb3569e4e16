"""Grad-div stabilized Taylor-Hood time stepping and snapshot collection.

Each step solves

    (D_t u, v) + nu (grad u, grad v) + b(w, u, v) + mu (div u, div v) - (p, div v) = (f, v)
    (div u, q) = 0

where ``D_t`` is the implicit Euler or BDF2 difference and ``w`` is the
previous Picard iterate (implicit Euler) or the extrapolation
``2 u^{n-1} - u^{n-2}`` (semi-implicit BDF2).
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .assembly import ConvectionForm, FormKind, assemble_convection, assemble_matrix
from .errors import ConfigError, ContractError, DimensionError, StepError
from .fespace import VELOCITY, FeFunction, THSpace, interpolate
from .linsolve import SaddleSystem, solve_saddle
from .problems import Forcing, ManufacturedSolution, zero_forcing

__all__ = [
    "Scheme",
    "FomConfig",
    "FomState",
    "FomSolver",
    "FomSeries",
    "FomResult",
    "SnapshotSet",
    "fom_step",
    "fom_run",
    "exact_l2_error",
]

ERROR_DEGREE = 7


class Scheme(str, enum.Enum):
    IMPLICIT_EULER = "implicit_euler_picard"
    BDF2 = "bdf2_semi_implicit"


def _grid_index(t: float, dt: float, what: str) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(dt, abs(t)):
        raise ConfigError(f"{what} = {t} is not a multiple of dt = {dt}")
    return k


@dataclass
class FomConfig:
    """Physical and numerical parameters of a full-order run.

    ``initial`` is ``None`` (rest state plus boundary data), a callable
    ``(x, y) -> (ux, uy)`` interpolated at the nodes, or a coefficient
    vector. ``window`` is the closed snapshot interval ``[t_start, t_end]``;
    ``None`` disables snapshot recording. ``reference_end`` additionally
    keeps every step from ``t_start`` up to that time, for predictive
    comparisons. ``convection=False`` drops the nonlinear term (Stokes
    limit) and ``test_mode`` permits ``nu = 0``.
    """

    nu: float
    dt: float
    T: float
    mu: float = 0.05
    scheme: Scheme = Scheme.IMPLICIT_EULER
    picard_tol: float = 1e-10
    picard_max_iters: int = 50
    forcing: Forcing = field(default_factory=zero_forcing)
    initial: object = None
    window: tuple[float, float] | None = None
    stride: int = 1
    form: ConvectionForm = ConvectionForm.SKEW
    exact: ManufacturedSolution | None = None
    reference_end: float | None = None
    convection: bool = True
    test_mode: bool = False

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        self.form = ConvectionForm(self.form)
        self.validate()

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def validate(self):
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError("dt and T must be positive")
        m = self.T / self.dt
        if abs(m - round(m)) > 1e-12 * m:
            raise ConfigError(f"dt = {self.dt} does not divide T = {self.T}")
        if self.mu < 0:
            raise ConfigError("grad-div parameter mu must be nonnegative")
        if self.nu < 0 or (self.nu == 0 and not self.test_mode):
            raise ConfigError("nu must be positive (nu = 0 requires test_mode)")
        if self.picard_tol <= 0 or self.picard_max_iters < 1:
            raise ConfigError("picard_tol must be positive and picard_max_iters >= 1")
        if self.stride < 1:
            raise ConfigError("snapshot stride must be >= 1")
        if self.window is not None:
            t0, t1 = self.window
            eps = 1e-12 * self.T
            if t0 < -eps or t1 > self.T + eps or t1 < t0:
                raise ConfigError(f"snapshot window [{t0}, {t1}] is not inside [0, {self.T}]")
            _grid_index(t0, self.dt, "window start")
            _grid_index(t1, self.dt, "window end")
        if self.reference_end is not None:
            if self.window is None:
                raise ConfigError("reference_end needs a snapshot window")
            if not (self.window[0] <= self.reference_end <= self.T + 1e-12 * self.T):
                raise ConfigError("reference_end must lie between the window start and T")
            _grid_index(self.reference_end, self.dt, "reference_end")

    def snapshot_steps(self) -> np.ndarray:
        if self.window is None:
            return np.zeros(0, dtype=np.int64)
        n0 = _grid_index(self.window[0], self.dt, "window start")
        n1 = _grid_index(self.window[1], self.dt, "window end")
        return np.arange(n0, n1 + 1, self.stride, dtype=np.int64)

    def describe(self) -> dict:
        """JSON-friendly summary of the scalar parameters."""
        d = {k: v for k, v in asdict(self).items() if k not in ("forcing", "initial", "exact")}
        d["scheme"] = self.scheme.value
        d["form"] = self.form.value
        d["forcing"] = self.forcing.name
        d["exact"] = None if self.exact is None else "manufactured"
        d["window"] = None if self.window is None else list(self.window)
        return d


@dataclass
class SnapshotSet:
    """Ordered velocity snapshots at uniformly spaced times.

    ``vectors`` has shape ``(M, n_vel)``. ``spacing`` is the time between
    consecutive snapshots and is kept so empty and single-snapshot sets
    still carry it.
    """

    space: THSpace
    times: np.ndarray
    vectors: np.ndarray
    spacing: float
    centering: bool = False
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.vectors = np.asarray(self.vectors, dtype=np.float64).reshape(len(self.times), -1) \
            if len(self.times) else np.zeros((0, self.space.n_vel))
        if self.vectors.shape[1] != self.space.n_vel:
            raise DimensionError(f"snapshots have {self.vectors.shape[1]} entries, space has {self.space.n_vel}")
        if len(self.times) > 1:
            d = np.diff(self.times)
            if np.any(d <= 0):
                raise ContractError("snapshot times must be strictly increasing")
            if np.max(np.abs(d - self.spacing)) > 1e-9 * self.spacing:
                raise ContractError("snapshot times are not uniformly spaced")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def t_start(self) -> float:
        return float(self.times[0]) if len(self.times) else 0.0

    def mean(self) -> np.ndarray:
        if len(self) == 0:
            return np.zeros(self.space.n_vel)
        return self.vectors.mean(axis=0)

    def field(self, j: int) -> FeFunction:
        return FeFunction(self.space, VELOCITY, self.vectors[j])

    def window(self, t0: float, t1: float) -> "SnapshotSet":
        tol = 1e-9 * self.spacing
        sel = (self.times >= t0 - tol) & (self.times <= t1 + tol)
        return SnapshotSet(self.space, self.times[sel], self.vectors[sel], self.spacing,
                           self.centering, dict(self.metadata))


@dataclass
class FomState:
    """Velocity history and pressure at step ``n``."""

    n: int
    t: float
    u: np.ndarray
    p: np.ndarray
    u_prev: np.ndarray | None = None
    iterations: int = 0
    increment: float = 0.0


def exact_l2_error(space: THSpace, coef, exact_u: Callable, degree: int = ERROR_DEGREE) -> float:
    """``||u - u_h||_0`` with ``u`` evaluated at the quadrature points."""
    q = space.quad(degree)
    val, _ = space.velocity_at_quad(coef, degree)
    ex, ey = exact_u(q.points[..., 0], q.points[..., 1])
    d2 = (val[..., 0] - ex) ** 2 + (val[..., 1] - ey) ** 2
    return float(np.sqrt(np.sum(q.wdet * d2)))


class FomSolver:
    """Time stepper bound to one space and configuration.

    Matrices are assembled once; only the convection matrix changes
    between linear solves.
    """

    def __init__(self, space: THSpace, cfg: FomConfig):
        self.space = space
        self.cfg = cfg
        self.M = assemble_matrix(FormKind.MASS, space)
        self.A = assemble_matrix(FormKind.STIFFNESS, space)
        self.G = assemble_matrix(FormKind.GRADDIV, space)
        self.B = assemble_matrix(FormKind.DIVERGENCE, space)
        self.viscous = (cfg.nu * self.A + cfg.mu * self.G).tocsr()
        self.weights = space.pressure_weights if space.encloses else None

    def initial_state(self) -> FomState:
        init = self.cfg.initial
        if init is None:
            coef = np.zeros(self.space.n_vel)
        elif callable(init):
            coef = interpolate(self.space, VELOCITY, init).coef
        else:
            coef = np.asarray(init, dtype=np.float64)
            if coef.shape != (self.space.n_vel,):
                raise DimensionError(f"initial condition needs {self.space.n_vel} coefficients")
        coef = self.space.apply_dirichlet(coef)
        return FomState(0, 0.0, coef, np.zeros(self.space.n_pre))

    def l2(self, d: np.ndarray) -> float:
        return float(np.sqrt(max(d @ (self.M @ d), 0.0)))

    def _solve(self, K, rhs):
        sys = SaddleSystem(K, self.B, rhs, None, self.space.dirichlet_dofs,
                           self.space.dirichlet_data, self.weights)
        return solve_saddle(sys)

    def _lhs(self, mass_factor: float, w):
        K = mass_factor * self.M + self.viscous
        if self.cfg.convection:
            K = K + assemble_convection(self.cfg.form, w, self.space)
        return K

    def step_implicit_euler(self, state: FomState) -> FomState:
        cfg, dt = self.cfg, self.cfg.dt
        t = (state.n + 1) * dt
        rhs = self.M @ state.u / dt + cfg.forcing.load(self.space, t)
        w = state.u
        if not cfg.convection:
            u, p = self._solve(self._lhs(1.0 / dt, w), rhs)
            return FomState(state.n + 1, t, u, p, state.u, 1, 0.0)
        inc = np.inf
        for it in range(1, cfg.picard_max_iters + 1):
            u, p = self._solve(self._lhs(1.0 / dt, w), rhs)
            inc = self.l2(u - w)
            w = u
            if inc <= cfg.picard_tol:
                return FomState(state.n + 1, t, u, p, state.u, it, inc)
        raise StepError(f"Picard iteration did not converge at t = {t:.6g}", inc)

    def step_bdf2(self, state: FomState) -> FomState:
        if state.u_prev is None:
            return self.step_implicit_euler(state)
        cfg, dt = self.cfg, self.cfg.dt
        t = (state.n + 1) * dt
        w = 2 * state.u - state.u_prev
        rhs = self.M @ (4 * state.u - state.u_prev) / (2 * dt) + cfg.forcing.load(self.space, t)
        u, p = self._solve(self._lhs(1.5 / dt, w), rhs)
        return FomState(state.n + 1, t, u, p, state.u, 1, 0.0)

    def step(self, state: FomState) -> FomState:
        if self.cfg.scheme is Scheme.IMPLICIT_EULER:
            return self.step_implicit_euler(state)
        return self.step_bdf2(state)


def fom_step(state: FomState, cfg: FomConfig, space: THSpace) -> FomState:
    """Advance one step. Reuse a :class:`FomSolver` for repeated steps."""
    return FomSolver(space, cfg).step(state)


@dataclass
class FomSeries:
    """Per-step diagnostics, index 0 being the initial state."""

    step: np.ndarray
    time: np.ndarray
    kinetic_energy: np.ndarray
    div_norm: np.ndarray
    err_l2: np.ndarray | None
    picard_iterations: np.ndarray

    def columns(self) -> dict:
        cols = {"step": self.step, "time": self.time, "kinetic_energy": self.kinetic_energy,
                "div_norm": self.div_norm}
        if self.err_l2 is not None:
            cols["err_l2"] = self.err_l2
        return cols


@dataclass
class FomResult:
    snapshots: SnapshotSet
    series: FomSeries
    final: FomState
    pressures: np.ndarray
    reference: SnapshotSet | None = None
    states: list = field(default_factory=list)


def fom_run(cfg: FomConfig, space: THSpace, keep_states: bool = False) -> FomResult:
    """Step from 0 to ``T``, recording snapshots and diagnostics.

    ``pressures`` holds the pressure at every snapshot step. With
    ``keep_states`` every :class:`FomState` is retained (tests only).
    """
    solver = FomSolver(space, cfg)
    n_steps = cfg.n_steps
    snap_steps = set(cfg.snapshot_steps().tolist())
    ref_range = None
    if cfg.reference_end is not None:
        ref_range = (_grid_index(cfg.window[0], cfg.dt, "window start"),
                     _grid_index(cfg.reference_end, cfg.dt, "reference_end"))
    energy = np.zeros(n_steps + 1)
    div = np.zeros(n_steps + 1)
    iters = np.zeros(n_steps + 1, dtype=np.int64)
    err = np.zeros(n_steps + 1) if cfg.exact is not None else None
    snaps, snap_t, pres, ref, ref_t = [], [], [], [], []
    states = []

    state = solver.initial_state()
    while True:
        u = state.u
        energy[state.n] = 0.5 * u @ (solver.M @ u)
        div[state.n] = np.sqrt(max(u @ (solver.G @ u), 0.0))
        iters[state.n] = state.iterations
        if err is not None:
            err[state.n] = exact_l2_error(space, u, cfg.exact.velocity(state.t))
        if state.n in snap_steps:
            snaps.append(u.copy())
            snap_t.append(state.t)
            pres.append(state.p.copy())
        if ref_range is not None and ref_range[0] <= state.n <= ref_range[1]:
            ref.append(u.copy())
            ref_t.append(state.t)
        if keep_states:
            states.append(state)
        if state.n == n_steps:
            break
        state = solver.step(state)

    meta = cfg.describe()
    spacing = cfg.dt * cfg.stride
    snapset = SnapshotSet(space, np.array(snap_t), np.array(snaps).reshape(len(snaps), space.n_vel),
                          spacing, False, meta)
    refset = None
    if ref_range is not None:
        refset = SnapshotSet(space, np.array(ref_t), np.array(ref).reshape(len(ref), space.n_vel),
                             cfg.dt, False, meta)
    steps = np.arange(n_steps + 1)
    series = FomSeries(steps, steps * cfg.dt, energy, div, err, iters)
    return FomResult(snapset, series, state, np.array(pres).reshape(len(pres), space.n_pre),
                     refset, states)
