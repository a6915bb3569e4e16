"""Proper orthogonal decomposition by the method of snapshots.

The correlation matrix is ``K[i, j] = (u_i, u_j)_0 / M``. Its eigenpairs
are obtained without forming ``K``: the snapshots are sampled at the
quadrature points that integrate the mass product exactly, giving a
factor ``W`` with ``W^T W = M K``, and ``W`` is orthogonalized by
one-sided Jacobi in extended precision (``np.longdouble``). Small
eigenvalues, and hence the tails ``Lambda_r``, keep their relative
accuracy far below ``eps * lambda_1``. Modes are returned in double
precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import FormKind, assemble_matrix
from .errors import ConfigError, ContractError, DegenerateEnsembleError, DimensionError
from .fespace import VELOCITY, FeFunction, THSpace
from .fom import SnapshotSet
from .linsolve import gram_eig, sym_eig

__all__ = [
    "PodConfig",
    "PODBasis",
    "correlation_matrix",
    "build_basis",
    "project",
    "lift",
    "pod_stiffness",
    "select_rank",
    "mass_product",
    "quadrature_factor",
]

MASS_DEGREE = 5

WORK = np.longdouble


@dataclass(frozen=True)
class PodConfig:
    """Offline settings.

    Give at most one of ``r`` (explicit size) and ``tol`` (smallest ``r``
    with ``Lambda_r / Lambda_0 <= tol``). With neither, ``r = d_v``.
    """

    centering: bool = False
    r: int | None = None
    tol: float | None = None
    eps: float = 1e-12

    def __post_init__(self):
        if self.r is not None and self.tol is not None:
            raise ConfigError("give either r or tol, not both")
        if self.r is not None and self.r < 1:
            raise ConfigError("r must be >= 1")
        if self.tol is not None and not self.tol > 0:
            raise ConfigError("tol must be positive")
        if not 0 < self.eps < 1:
            raise ConfigError("eigenvalue cutoff eps must lie in (0, 1)")


def mass_product(mass, X, dtype=WORK) -> np.ndarray:
    """``mass @ X`` accumulated in ``dtype`` (``X`` of shape ``(n,)`` or ``(n, m)``)."""
    mass = sp.csr_matrix(mass)
    X = np.asarray(X)
    vec = X.ndim == 1
    Xw = X.astype(dtype).reshape(len(X), -1)
    data = mass.data.astype(dtype)
    prod = data[:, None] * Xw[mass.indices]
    out = np.zeros((mass.shape[0], Xw.shape[1]), dtype=dtype)
    nonempty = np.flatnonzero(np.diff(mass.indptr))
    if len(nonempty):
        out[nonempty] = np.add.reduceat(prod, mass.indptr[nonempty], axis=0)
    return out[:, 0] if vec else out


def _ensemble(snaps: SnapshotSet, centering: bool):
    U = snaps.vectors
    if centering:
        mean = U.astype(WORK).mean(axis=0)
        return U.astype(WORK) - mean, mean.astype(np.float64)
    return U.astype(WORK), None


def correlation_matrix(snaps: SnapshotSet, mass=None, centering: bool = False) -> np.ndarray:
    """Symmetric ``(M, M)`` correlation matrix in ``np.longdouble``.

    With ``centering`` the ensemble mean is subtracted first.
    """
    if mass is None:
        mass = assemble_matrix(FormKind.MASS, snaps.space)
    if mass.shape != (snaps.space.n_vel, snaps.space.n_vel):
        raise ContractError(f"mass matrix {mass.shape} does not match {snaps.space.n_vel} velocity dofs")
    if len(snaps) == 0:
        raise ContractError("correlation matrix needs at least one snapshot")
    U, _ = _ensemble(snaps, centering)
    MU = mass_product(mass, U.T)
    K = (U @ MU) / len(snaps)
    return 0.5 * (K + K.T)


def quadrature_factor(snaps: SnapshotSet, centering: bool = False) -> np.ndarray:
    """Factor ``W`` of shape ``(2 P, M)`` with ``W^T W = M K``.

    Rows are velocity components at the degree-5 quadrature points scaled
    by the square root of the weights; that rule integrates products of
    P2 functions exactly, so ``W^T W`` reproduces the mass inner product.
    """
    if len(snaps) == 0:
        raise ContractError("correlation factor needs at least one snapshot")
    U, _ = _ensemble(snaps, centering)
    space = snaps.space
    q = space.quad(MASS_DEGREE)
    root = np.sqrt(q.wdet.astype(WORK))
    cols = []
    for u in U:
        val, _ = space.velocity_at_quad(u, MASS_DEGREE)
        cols.append((val * root[..., None]).ravel())
    return np.array(cols).T


def select_rank(tails: np.ndarray, d_v: int, tol: float) -> int:
    """Smallest ``r >= 1`` with ``tails[r] / tails[0] <= tol``, capped at ``d_v``."""
    for r in range(1, d_v + 1):
        if tails[r] <= tol * tails[0]:
            return r
    return d_v


@dataclass(frozen=True)
class PODBasis:
    """L2-orthonormal POD modes.

    Attributes
    ----------
    modes : (n_vel, r) array
    eigenvalues : (M,) array, descending, negative roundoff clipped to zero
    d_v : number of eigenvalues above ``eps * lambda_1``
    tails : (M + 1,) array, ``tails[r] = sum_{k > r} lambda_k``
    mean : (n_vel,) array or None when uncentered
    all_modes : (n_vel, d_v) array; ``modes`` is its leading block
    """

    space: THSpace
    modes: np.ndarray
    eigenvalues: np.ndarray
    d_v: int
    tails: np.ndarray
    mean: np.ndarray | None = None
    n_snapshots: int = 0
    all_modes: np.ndarray | None = field(default=None, repr=False)

    @property
    def r(self) -> int:
        return self.modes.shape[1]

    @property
    def centered(self) -> bool:
        return self.mean is not None

    def truncate(self, r: int) -> "PODBasis":
        """Basis of the leading ``r`` modes; ``r`` is clamped to ``d_v``."""
        if r < 1:
            raise ConfigError("r must be >= 1")
        src = self.all_modes if self.all_modes is not None else self.modes
        r = min(r, src.shape[1])
        return PODBasis(self.space, src[:, :r], self.eigenvalues, self.d_v, self.tails,
                        self.mean, self.n_snapshots, self.all_modes)

    def offset(self) -> np.ndarray:
        return np.zeros(self.space.n_vel) if self.mean is None else self.mean


def build_basis(snaps: SnapshotSet, cfg: PodConfig = PodConfig()) -> PODBasis:
    """Modes ``phi_k = sum_j v_k[j] u_j / sqrt(M lambda_k)`` from the correlation eigenpairs.

    Raises
    ------
    DegenerateEnsembleError
        If no eigenvalue is positive (for example an all-zero ensemble).
    """
    W = quadrature_factor(snaps, cfg.centering)
    m = len(snaps)
    eig = gram_eig(W)
    lam = np.maximum(eig.values / m, 0)
    if len(lam) == 0 or not lam[0] > 0:
        raise DegenerateEnsembleError("snapshot ensemble has no positive correlation eigenvalue")
    d_v = int(np.count_nonzero(lam > cfg.eps * lam[0]))
    tails = np.concatenate([np.cumsum(lam[::-1])[::-1], np.zeros(1, dtype=WORK)])
    U, mean = _ensemble(snaps, cfg.centering)
    modes = (U.T @ eig.vectors[:, :d_v]) / np.sqrt(m * lam[:d_v])
    modes = modes.astype(np.float64)
    if cfg.r is not None:
        r = min(cfg.r, d_v)
    elif cfg.tol is not None:
        r = select_rank(tails, d_v, cfg.tol)
    else:
        r = d_v
    return PODBasis(snaps.space, modes[:, :r], lam.astype(np.float64), d_v,
                    tails.astype(np.float64), mean, m, modes)


def _coef(basis: PODBasis, f) -> np.ndarray:
    if isinstance(f, FeFunction):
        f.require(VELOCITY, basis.space)
        return f.coef
    c = np.asarray(f, dtype=np.float64)
    if c.shape != (basis.space.n_vel,):
        raise DimensionError(f"expected {basis.space.n_vel} velocity coefficients, got {c.shape}")
    return c


def project(basis: PODBasis, f, mass=None) -> np.ndarray:
    """Reduced coefficients ``a_k = (f - mean, phi_k)_0``."""
    if mass is None:
        mass = assemble_matrix(FormKind.MASS, basis.space)
    return basis.modes.T @ (mass @ (_coef(basis, f) - basis.offset()))


def lift(basis: PODBasis, a) -> FeFunction:
    """``mean + Phi a`` as a velocity function."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape != (basis.r,):
        raise DimensionError(f"expected {basis.r} reduced coefficients, got {a.shape}")
    return FeFunction(basis.space, VELOCITY, basis.offset() + basis.modes @ a)


def pod_stiffness(basis: PODBasis, stiffness=None):
    """Reduced stiffness ``S[i, j] = (grad phi_i, grad phi_j)`` and its spectral norm."""
    if stiffness is None:
        stiffness = assemble_matrix(FormKind.STIFFNESS, basis.space)
    S = basis.modes.T @ (stiffness @ basis.modes)
    S = 0.5 * (S + S.T)
    return S, float(sym_eig(S).values[0])
