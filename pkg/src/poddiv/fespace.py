"""Taylor-Hood P2/P1 spaces on triangular meshes.

Scalar P2 nodes are the mesh vertices followed by edge midpoints (edges
ordered by sorted endpoint pair). Velocity dofs interleave the two
components per scalar node: dof ``2*s + c`` is component ``c`` at node
``s``. Pressure dofs are the mesh vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping

import numpy as np

from .errors import ContractError, DimensionError, IntegrityError
from .mesh import Mesh, edge_table, quadrature_rule

__all__ = [
    "THSpace",
    "FeFunction",
    "QuadData",
    "build_taylor_hood",
    "interpolate",
    "p2_basis",
    "p1_basis",
    "VELOCITY",
    "PRESSURE",
]

VELOCITY = "velocity"
PRESSURE = "pressure"

# barycentric gradients w.r.t. reference coordinates (x, y)
_DLAMBDA = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
_P2_EDGES = ((0, 1), (1, 2), (2, 0))


def p2_basis(bary):
    """P2 shape functions and reference gradients at barycentric points.

    Returns ``(N, dN)`` with shapes ``(Q, 6)`` and ``(Q, 6, 2)``; local
    order is the three vertices then edge midpoints 01, 12, 20.
    """
    lam = np.atleast_2d(np.asarray(bary, dtype=np.float64))
    q = len(lam)
    N = np.empty((q, 6))
    dN = np.empty((q, 6, 2))
    for a in range(3):
        N[:, a] = lam[:, a] * (2 * lam[:, a] - 1)
        dN[:, a] = (4 * lam[:, a] - 1)[:, None] * _DLAMBDA[a]
    for k, (a, b) in enumerate(_P2_EDGES):
        N[:, 3 + k] = 4 * lam[:, a] * lam[:, b]
        dN[:, 3 + k] = 4 * (lam[:, b, None] * _DLAMBDA[a] + lam[:, a, None] * _DLAMBDA[b])
    return N, dN


def p1_basis(bary):
    """P1 shape functions ``(Q, 3)`` and constant reference gradients ``(Q, 3, 2)``."""
    lam = np.atleast_2d(np.asarray(bary, dtype=np.float64))
    return lam.copy(), np.broadcast_to(_DLAMBDA, (len(lam), 3, 2)).copy()


@dataclass(frozen=True)
class QuadData:
    """Basis data at the quadrature points of every element.

    ``dN`` and ``dL`` are physical gradients, shapes ``(T, Q, 6, 2)`` and
    ``(T, Q, 3, 2)``; ``wdet`` holds weights times ``|det J|``.
    """

    degree: int
    N: np.ndarray
    dN: np.ndarray
    L: np.ndarray
    dL: np.ndarray
    wdet: np.ndarray
    points: np.ndarray


@dataclass(eq=False)
class THSpace:
    """P2-vector velocity / P1 pressure pair with Dirichlet data.

    Build with :func:`build_taylor_hood`.
    """

    mesh: Mesh
    dirichlet_markers: frozenset
    dirichlet_values: Mapping[int, Callable | None]
    edges: np.ndarray = field(repr=False)
    cell_nodes: np.ndarray = field(repr=False)
    node_coords: np.ndarray = field(repr=False)
    dirichlet_dofs: np.ndarray = field(repr=False)
    dirichlet_data: np.ndarray = field(repr=False)
    _quad: dict = field(default_factory=dict, repr=False)

    @property
    def n_scalar(self) -> int:
        return len(self.node_coords)

    @property
    def n_vel(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_pre(self) -> int:
        return self.mesh.n_vertices

    @cached_property
    def cell_vel_dofs(self) -> np.ndarray:
        """(T, 12) velocity dofs per element, local index ``2*a + c``."""
        nodes = self.cell_nodes
        out = np.empty((len(nodes), 12), dtype=np.int64)
        out[:, 0::2] = 2 * nodes
        out[:, 1::2] = 2 * nodes + 1
        return out

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_vel, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return np.flatnonzero(mask)

    @cached_property
    def encloses(self) -> bool:
        """True when every boundary edge is Dirichlet (pressure fixed up to a constant)."""
        marks = set(self.mesh.boundary_markers.tolist())
        return marks <= set(self.dirichlet_markers)

    @cached_property
    def _geometry(self):
        v = self.mesh.vertices[self.mesh.triangles]
        J = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        Jinv = np.empty_like(J)
        Jinv[:, 0, 0] = J[:, 1, 1] / det
        Jinv[:, 1, 1] = J[:, 0, 0] / det
        Jinv[:, 0, 1] = -J[:, 0, 1] / det
        Jinv[:, 1, 0] = -J[:, 1, 0] / det
        return v[:, 0], J, det, Jinv

    def quad(self, degree: int = 5) -> QuadData:
        """Cached basis data for the quadrature rule of ``degree``."""
        if degree not in self._quad:
            rule = quadrature_rule(degree)
            p0, J, det, Jinv = self._geometry
            N, dNr = p2_basis(rule.points)
            L, dLr = p1_basis(rule.points)
            dN = np.einsum("tji,qaj->tqai", Jinv, dNr)
            dL = np.einsum("tji,qaj->tqai", Jinv, dLr)
            wdet = np.abs(det)[:, None] * rule.weights[None, :]
            pts = p0[:, None, :] + np.einsum("tij,qj->tqi", J, rule.xy)
            self._quad[degree] = QuadData(degree, N, dN, L, dL, wdet, pts)
        return self._quad[degree]

    def reference_to_physical(self, bary):
        """Map barycentric points (Q, 3) to physical coordinates (T, Q, 2)."""
        p0, J, _, _ = self._geometry
        xy = np.atleast_2d(bary)[:, 1:]
        return p0[:, None, :] + np.einsum("tij,qj->tqi", J, xy)

    def boundary_nodes(self, marker: int) -> np.ndarray:
        """Scalar P2 nodes (vertices and midpoints) on edges with ``marker``."""
        sel = self.mesh.boundary_edges[self.mesh.boundary_markers == marker]
        if len(sel) == 0:
            return np.zeros(0, dtype=np.int64)
        lookup = {tuple(e): k for k, e in enumerate(self.edges.tolist())}
        mids = [self.mesh.n_vertices + lookup[tuple(e)] for e in sel.tolist()]
        return np.unique(np.concatenate([sel.ravel(), np.asarray(mids, dtype=np.int64)]))

    def zero_velocity(self) -> "FeFunction":
        return FeFunction(self, VELOCITY, np.zeros(self.n_vel))

    def zero_pressure(self) -> "FeFunction":
        return FeFunction(self, PRESSURE, np.zeros(self.n_pre), zero_mean=True)

    def apply_dirichlet(self, coef, homogeneous: bool = False) -> np.ndarray:
        """Copy of ``coef`` with constrained dofs set to their prescribed values."""
        out = np.array(coef, dtype=np.float64)
        if out.shape != (self.n_vel,):
            raise DimensionError(f"expected {self.n_vel} velocity coefficients, got {out.shape}")
        out[self.dirichlet_dofs] = 0.0 if homogeneous else self.dirichlet_data
        return out

    @cached_property
    def pressure_weights(self) -> np.ndarray:
        """Integrals of the P1 basis functions, used for mean removal."""
        q = self.quad(2)
        w = np.zeros(self.n_pre)
        np.add.at(w, self.mesh.triangles, np.einsum("tq,qa->ta", q.wdet, q.L))
        return w

    # ----------------------------------------------------------------------
    # field evaluation at quadrature points
    # ----------------------------------------------------------------------

    def velocity_at_quad(self, coef, degree: int = 5):
        """Values ``(T, Q, 2)`` and gradients ``(T, Q, 2, 2)``, ``G[..., c, d] = d u_c / d x_d``."""
        q = self.quad(degree)
        ue = np.asarray(coef)[self.cell_vel_dofs].reshape(-1, 6, 2)
        val = np.einsum("qa,tac->tqc", q.N, ue)
        grad = np.einsum("tqad,tac->tqcd", q.dN, ue)
        return val, grad

    def pressure_at_quad(self, coef, degree: int = 5):
        """Values ``(T, Q)`` and gradients ``(T, Q, 2)`` of a P1 field."""
        q = self.quad(degree)
        pe = np.asarray(coef)[self.mesh.triangles]
        return np.einsum("qa,ta->tq", q.L, pe), np.einsum("tqad,ta->tqd", q.dL, pe)

    def velocity_at(self, coef, bary):
        """Evaluate each element's velocity polynomial at barycentric points.

        Points may lie outside the element (polynomial extension).
        Returns values ``(T, Q, 2)``.
        """
        N, _ = p2_basis(bary)
        ue = np.asarray(coef)[self.cell_vel_dofs].reshape(-1, 6, 2)
        return np.einsum("qa,tac->tqc", N, ue)


@dataclass
class FeFunction:
    """Coefficient vector tied to a space and a role (velocity or pressure)."""

    space: THSpace
    role: str
    coef: np.ndarray
    zero_mean: bool = False

    def __post_init__(self):
        if self.role not in (VELOCITY, PRESSURE):
            raise ContractError(f"unknown role {self.role!r}")
        self.coef = np.asarray(self.coef, dtype=np.float64)
        n = self.space.n_vel if self.role == VELOCITY else self.space.n_pre
        if self.coef.shape != (n,):
            raise DimensionError(f"{self.role} function needs {n} coefficients, got {self.coef.shape}")

    def copy(self) -> "FeFunction":
        return FeFunction(self.space, self.role, self.coef.copy(), self.zero_mean)

    def require(self, role: str, space: THSpace | None = None) -> "FeFunction":
        if self.role != role:
            raise ContractError(f"expected a {role} function, got {self.role}")
        if space is not None and self.space is not space:
            raise ContractError("function belongs to a different space")
        return self

    def mean(self) -> float:
        """Integral mean of a pressure function."""
        self.require(PRESSURE)
        w = self.space.pressure_weights
        return float(w @ self.coef / w.sum())

    def remove_mean(self) -> "FeFunction":
        out = self.coef - self.mean()
        return FeFunction(self.space, PRESSURE, out, zero_mean=True)


def build_taylor_hood(mesh: Mesh, dirichlet_markers=None, values=None) -> THSpace:
    """Assemble dof maps for the P2/P1 pair on ``mesh``.

    Parameters
    ----------
    mesh : Mesh
    dirichlet_markers : iterable of int, optional
        Boundary markers carrying velocity Dirichlet conditions; defaults
        to every marker present on the mesh.
    values : mapping, optional
        ``marker -> g(x, y) -> (gx, gy)``. Missing markers are homogeneous.
        A node shared by several markers takes the value of the largest one.
    """
    if mesh.n_triangles == 0:
        raise IntegrityError("cannot build a space on an empty mesh")
    markers = mesh.markers() if dirichlet_markers is None else {int(m) for m in dirichlet_markers}
    values = dict(values or {})
    unknown = set(values) - markers
    if unknown:
        raise ContractError(f"boundary values given for non-Dirichlet markers {sorted(unknown)}")
    edges, tri_edges, _ = edge_table(mesh.triangles)
    nv = mesh.n_vertices
    cell_nodes = np.concatenate([mesh.triangles, nv + tri_edges], axis=1)
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    coords = np.vstack([mesh.vertices, mids])
    space = THSpace(mesh, frozenset(markers), values, edges, cell_nodes, coords,
                    np.zeros(0, dtype=np.int64), np.zeros(0))
    data = np.full((len(coords), 2), np.nan)
    for m in sorted(markers):
        nodes = space.boundary_nodes(m)
        if len(nodes) == 0:
            continue
        g = values.get(m)
        if g is None:
            data[nodes] = 0.0
        else:
            gx, gy = g(coords[nodes, 0], coords[nodes, 1])
            data[nodes, 0] = np.broadcast_to(gx, len(nodes))
            data[nodes, 1] = np.broadcast_to(gy, len(nodes))
    nodes = np.flatnonzero(~np.isnan(data[:, 0]))
    dofs = np.column_stack([2 * nodes, 2 * nodes + 1]).ravel()
    space.dirichlet_dofs = dofs
    space.dirichlet_data = data[nodes].ravel()
    return space


def interpolate(space: THSpace, role: str, f) -> FeFunction:
    """Nodal interpolant of an analytic field.

    Velocity ``f(x, y)`` returns a pair ``(fx, fy)``; pressure ``f(x, y)``
    returns an array.
    """
    if role == VELOCITY:
        x, y = space.node_coords.T
        fx, fy = f(x, y)
        coef = np.empty(space.n_vel)
        coef[0::2] = np.broadcast_to(fx, x.shape)
        coef[1::2] = np.broadcast_to(fy, x.shape)
        return FeFunction(space, VELOCITY, coef)
    if role == PRESSURE:
        x, y = space.mesh.vertices.T
        return FeFunction(space, PRESSURE, np.broadcast_to(f(x, y), x.shape).astype(np.float64))
    raise ContractError(f"unknown role {role!r}")
