"""Body forces, initial data and the analytic test problems.

Every forcing is a finite sum ``f(x, t) = sum_k g_k(t) F_k(x)`` so that
load vectors and reduced forcing vectors can be precomputed per term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .assembly import load_vector
from .errors import ConfigError

__all__ = [
    "Forcing",
    "ManufacturedSolution",
    "zero_forcing",
    "table_forcing",
    "desk_forcing",
    "DESK",
]

PI = np.pi


@dataclass
class Forcing:
    """Separable body force.

    ``terms`` is a sequence of ``(g, F)`` with ``g(t) -> float`` and
    ``F(x, y) -> (fx, fy)``.
    """

    terms: Sequence[tuple[Callable, Callable]] = ()
    name: str = "custom"
    _loads: dict = field(default_factory=dict, repr=False)

    def __call__(self, x, y, t):
        fx = np.zeros(np.shape(x))
        fy = np.zeros(np.shape(x))
        for g, F in self.terms:
            a, b = F(x, y)
            fx = fx + g(t) * a
            fy = fy + g(t) * b
        return fx, fy

    def term_loads(self, space, degree: int = 5):
        """Load vectors ``(F_k, phi_i)``, cached per space."""
        key = (id(space), degree)
        if key not in self._loads:
            self._loads[key] = (space, [load_vector(space, F, degree) for _, F in self.terms])
        return self._loads[key][1]

    def load(self, space, t: float, degree: int = 5) -> np.ndarray:
        out = np.zeros(space.n_vel)
        for (g, _), b in zip(self.terms, self.term_loads(space, degree)):
            out += g(t) * b
        return out

    @property
    def is_zero(self) -> bool:
        return len(self.terms) == 0

    def time_factors(self, t: float) -> np.ndarray:
        return np.array([g(t) for g, _ in self.terms], dtype=np.float64)


def zero_forcing() -> Forcing:
    return Forcing((), "zero")


def table_forcing(rows) -> Forcing:
    """Spatially uniform force ``(fx(t), fy(t))``, piecewise linear in time.

    ``rows`` is a sequence of ``[t, fx, fy]`` with increasing ``t``;
    values are held constant outside the table.
    """
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or len(arr) == 0:
        raise ConfigError("forcing table needs rows of [t, fx, fy]")
    if np.any(np.diff(arr[:, 0]) <= 0):
        raise ConfigError("forcing table times must be strictly increasing")
    t, fx, fy = arr.T

    def one(x, y):
        return np.ones(np.shape(x)), np.zeros(np.shape(x))

    def other(x, y):
        return np.zeros(np.shape(x)), np.ones(np.shape(x))

    return Forcing(
        ((lambda s: float(np.interp(s, t, fx)), one), (lambda s: float(np.interp(s, t, fy)), other)),
        "table",
    )


@dataclass(frozen=True)
class ManufacturedSolution:
    """Stream function ``sin^2(pi x) sin^2(pi y) cos t`` on the unit square.

    Velocity ``(d psi/dy, -d psi/dx)``, pressure
    ``sin(2 pi x) sin(2 pi y) cos t``. Divergence free, zero on the
    boundary, zero-mean pressure.
    """

    nu: float

    @staticmethod
    def _U(x, y):
        return (PI * np.sin(PI * x) ** 2 * np.sin(2 * PI * y),
                -PI * np.sin(2 * PI * x) * np.sin(PI * y) ** 2)

    @staticmethod
    def _gradU(x, y):
        """Spatial part of the velocity gradient, ``G[c][d] = d U_c / d x_d``."""
        sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
        g11 = 2 * PI ** 2 * sx * cx * np.sin(2 * PI * y)
        g12 = 2 * PI ** 2 * sx ** 2 * np.cos(2 * PI * y)
        g21 = -2 * PI ** 2 * np.cos(2 * PI * x) * sy ** 2
        g22 = -2 * PI ** 2 * np.sin(2 * PI * x) * sy * cy
        return ((g11, g12), (g21, g22))

    def velocity(self, t: float):
        c = np.cos(t)

        def u(x, y):
            a, b = self._U(x, y)
            return c * a, c * b
        return u

    def velocity_gradient(self, t: float):
        c = np.cos(t)

        def g(x, y):
            (a, b), (d, e) = self._gradU(x, y)
            return ((c * a, c * b), (c * d, c * e))
        return g

    def pressure(self, t: float):
        c = np.cos(t)
        return lambda x, y: c * np.sin(2 * PI * x) * np.sin(2 * PI * y)

    def forcing(self) -> Forcing:
        """``f = u_t - nu lap u + (u . grad) u + grad p``, split by time factor."""
        nu = self.nu

        def steady(x, y):
            # -nu lap U + grad P
            a = 2 * PI ** 3 * (1 - 2 * np.cos(2 * PI * x)) * np.sin(2 * PI * y)
            b = 2 * PI ** 3 * (2 * np.cos(2 * PI * y) - 1) * np.sin(2 * PI * x)
            px = 2 * PI * np.cos(2 * PI * x) * np.sin(2 * PI * y)
            py = 2 * PI * np.sin(2 * PI * x) * np.cos(2 * PI * y)
            return nu * a + px, nu * b + py

        def transient(x, y):
            a, b = self._U(x, y)
            return -a, -b

        def convective(x, y):
            sx, cx, sy, cy = np.sin(PI * x), np.cos(PI * x), np.sin(PI * y), np.cos(PI * y)
            return (4 * PI ** 3 * sx ** 3 * cx * sy ** 2,
                    4 * PI ** 3 * sx ** 2 * sy ** 3 * cy)

        return Forcing(
            ((np.cos, steady), (np.sin, transient), (lambda t: np.cos(t) ** 2, convective)),
            "manufactured",
        )


def _vortex(kx: int, ky: int):
    """Divergence-free field from the stream function sin^2 sin^2 with mode numbers."""
    def F(x, y):
        ax, ay = PI * kx, PI * ky
        sx, sy = np.sin(ax * x), np.sin(ay * y)
        return (2 * ay * sx ** 2 * sy * np.cos(ay * y),
                -2 * ax * sx * np.cos(ax * x) * sy ** 2)
    return F


@dataclass(frozen=True)
class DeskProblem:
    """Periodically forced unit-square flow used for POD tests.

    A steady single-cell vortex drives the mean flow; harmonic ``m`` of
    ``omega`` forces the cells ``(m + 1, 1)`` and ``(1, m + 1)`` in
    quadrature with amplitude ``amplitude * decay**(m - 1)``.
    """

    amplitude: float = 0.5
    omega: float = 4.0 * PI
    harmonics: int = 3
    decay: float = 1.0

    @property
    def period(self) -> float:
        return 2 * PI / self.omega


DESK = DeskProblem()


def _harmonic(kind, m, amp, om):
    if kind == "sin":
        return lambda t: amp * np.sin(m * om * t)
    return lambda t: amp * np.cos(m * om * t)


def desk_forcing(problem: DeskProblem = DESK) -> Forcing:
    """Steady single-cell forcing plus oscillating multi-cell components."""
    amp, om = problem.amplitude, problem.omega
    terms = [(lambda t: amp, _vortex(1, 1))]
    for m in range(1, problem.harmonics + 1):
        a = amp * problem.decay ** (m - 1)
        terms.append((_harmonic("sin", m, a, om), _vortex(m + 1, 1)))
        terms.append((_harmonic("cos", m, a, om), _vortex(1, m + 1)))
    return Forcing(tuple(terms), "desk")
