"""Saddle-point solves for the velocity/pressure system and symmetric eigensolves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ContractError, SolverFailure

__all__ = ["SaddleSystem", "EigenDecomposition", "solve_saddle", "sym_eig", "gram_eig"]


@dataclass
class SaddleSystem:
    """Block system ``A u - B^T p = f``, ``B u = g`` with velocity constraints.

    Attributes
    ----------
    A : sparse (n_vel, n_vel)
    B : sparse (n_pre, n_vel)
    f : (n_vel,) array
    g : (n_pre,) array or None for zero
    constrained : (k,) int array of velocity dofs
    values : (k,) array of prescribed values
    pressure_weights : (n_pre,) array or None
        Integrals of the pressure basis. When given, the pressure is only
        determined up to a constant: one dof is pinned and the integral
        mean is removed afterwards.
    pin : int
        Pressure dof pinned to zero when the constant is free.
    """

    A: sp.spmatrix
    B: sp.spmatrix
    f: np.ndarray
    g: np.ndarray | None = None
    constrained: np.ndarray | None = None
    values: np.ndarray | None = None
    pressure_weights: np.ndarray | None = None
    pin: int = 0


def _check_dims(sys):
    n_vel = sys.A.shape[0]
    n_pre = sys.B.shape[0]
    if sys.A.shape != (n_vel, n_vel) or sys.B.shape[1] != n_vel:
        raise ContractError(f"incompatible blocks A{sys.A.shape}, B{sys.B.shape}")
    if np.shape(sys.f) != (n_vel,):
        raise ContractError(f"velocity rhs has shape {np.shape(sys.f)}, need ({n_vel},)")
    if sys.g is not None and np.shape(sys.g) != (n_pre,):
        raise ContractError(f"pressure rhs has shape {np.shape(sys.g)}, need ({n_pre},)")
    return n_vel, n_pre


def solve_saddle(sys: SaddleSystem, rtol: float = 1e-9):
    """Direct solve of the constrained saddle-point system.

    Dirichlet dofs are eliminated symmetrically; the remaining block
    system is factorized by SuperLU with COLAMD ordering and refined once.

    Returns
    -------
    u : (n_vel,) array
    p : (n_pre,) array, zero-mean when ``pressure_weights`` is given

    Raises
    ------
    SolverFailure
        If the factorization fails or the relative residual exceeds ``rtol``.
    """
    n_vel, n_pre = _check_dims(sys)
    A = sp.csr_matrix(sys.A)
    B = sp.csr_matrix(sys.B)
    g = np.zeros(n_pre) if sys.g is None else np.asarray(sys.g, dtype=np.float64)
    cons = np.zeros(0, dtype=np.int64) if sys.constrained is None else np.asarray(sys.constrained)
    vals = np.zeros(len(cons)) if sys.values is None else np.asarray(sys.values, dtype=np.float64)
    if len(vals) != len(cons):
        raise ContractError("constraint values and dofs differ in length")
    mask = np.ones(n_vel, dtype=bool)
    mask[cons] = False
    free = np.flatnonzero(mask)
    u_d = np.zeros(n_vel)
    u_d[cons] = vals

    floating = sys.pressure_weights is not None
    keep_p = np.arange(n_pre)
    if floating:
        keep_p = keep_p[keep_p != sys.pin]

    Af = A[free][:, free]
    Bf = B[keep_p][:, free]
    rhs_u = sys.f[free] - A[free] @ u_d
    rhs_p = g[keep_p] - B[keep_p] @ u_d
    K = sp.bmat([[Af, -Bf.T], [Bf, None]], format="csc")
    rhs = np.concatenate([rhs_u, rhs_p])
    try:
        lu = splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SolverFailure(f"factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    x += lu.solve(rhs - K @ x)
    scale = max(np.linalg.norm(rhs), abs(K).max() * np.linalg.norm(x), np.finfo(float).tiny)
    res = np.linalg.norm(K @ x - rhs) / scale
    if not np.isfinite(res) or res > rtol:
        raise SolverFailure("saddle-point solve inaccurate", res)

    u = u_d.copy()
    u[free] = x[:len(free)]
    p = np.zeros(n_pre)
    p[keep_p] = x[len(free):]
    if floating:
        w = np.asarray(sys.pressure_weights)
        p -= (w @ p) / w.sum()
    return u, p


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs sorted by descending eigenvalue; columns of ``vectors`` orthonormal."""

    values: np.ndarray
    vectors: np.ndarray
    sweeps: int = 0


def _rotation(half_gap, off):
    """Cosine and sine of the Jacobi rotation annihilating ``off``; overflow free."""
    t = np.copysign(1, half_gap) * off / (abs(half_gap) + np.hypot(half_gap, off))
    c = 1 / np.sqrt(1 + t * t)
    return c, c * t


def _sort_and_sign(vals, v, sweeps):
    n = len(vals)
    order = np.argsort(-vals, kind="stable")
    vals, v = vals[order], v[:, order]
    if n:
        big = np.argmax(np.abs(v), axis=0)
        signs = np.where(v[big, np.arange(n)] < 0, -1, 1).astype(v.dtype)
        v = v * signs
    return EigenDecomposition(vals, v, sweeps)


def sym_eig(K, tol: float = 1e-14, max_sweeps: int = 100, symmetry_tol: float = 1e-12,
            dtype=None) -> EigenDecomposition:
    """Eigen-decomposition of a dense symmetric matrix by cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    ``tol * ||K||_F``. Each eigenvector is signed so its largest-magnitude
    component is positive; equal eigenvalues keep their original order.
    ``dtype`` selects the working precision (e.g. ``np.longdouble``);
    results are returned in that precision.

    Raises
    ------
    ContractError
        If ``K`` is not square or not symmetric within ``symmetry_tol``.
    """
    work = np.asarray(K)
    work = np.array(work, dtype=dtype if dtype is not None else np.result_type(work, np.float64))
    if work.ndim != 2 or work.shape[0] != work.shape[1]:
        raise ContractError(f"expected a square matrix, got shape {work.shape}")
    n = work.shape[0]
    scale = np.abs(work).max() if work.size else 0.0
    if n and np.abs(work - work.T).max() > symmetry_tol * max(scale, np.finfo(float).tiny):
        raise ContractError("matrix is not symmetric")
    a = 0.5 * (work + work.T)
    v = np.eye(n, dtype=a.dtype)
    fro = np.sqrt(np.sum(a * a))
    sweeps = 0
    if n > 1 and fro > 0:
        threshold = tol * fro
        iu = np.triu_indices(n, 1)
        for sweeps in range(1, max_sweeps + 1):
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0:
                        continue
                    app, aqq = a[p, p], a[q, q]
                    # skip rotations that cannot change the diagonal
                    if abs(apq) < 1e-3 * np.finfo(a.dtype).eps * min(abs(app), abs(aqq)):
                        a[p, q] = a[q, p] = 0
                        continue
                    c, s = _rotation(0.5 * (aqq - app), apq)
                    ap, aq = a[:, p].copy(), a[:, q].copy()
                    a[:, p] = c * ap - s * aq
                    a[:, q] = s * ap + c * aq
                    rp, rq = a[p, :].copy(), a[q, :].copy()
                    a[p, :] = c * rp - s * rq
                    a[q, :] = s * rp + c * rq
                    a[p, q] = a[q, p] = 0
                    vp, vq = v[:, p].copy(), v[:, q].copy()
                    v[:, p] = c * vp - s * vq
                    v[:, q] = s * vp + c * vq
            off = np.sqrt(2 * np.sum(a[iu] ** 2))
            if off <= threshold:
                break
    return _sort_and_sign(np.diag(a).copy(), v, sweeps)


def gram_eig(W, tol: float | None = None, max_sweeps: int = 100, dtype=None) -> EigenDecomposition:
    """Eigen-decomposition of ``W.T @ W`` by one-sided (Hestenes) Jacobi on ``W``.

    Column pairs are rotated until every pair is orthogonal to ``tol``
    relative to the product of their norms; the Gram matrix is never
    formed, so small eigenvalues keep absolute accuracy of order
    ``eps * sqrt(lambda_max * lambda)`` instead of ``eps * lambda_max``.
    Ordering and sign conventions match :func:`sym_eig`.
    """
    w = np.asarray(W)
    w = np.array(w, dtype=dtype if dtype is not None else np.result_type(w, np.float64))
    if w.ndim != 2:
        raise ContractError(f"expected a 2-D factor, got shape {w.shape}")
    n = w.shape[1]
    if tol is None:
        tol = max(n, 1) * np.finfo(w.dtype).eps
    v = np.eye(n, dtype=w.dtype)
    norms = np.einsum("ij,ij->j", w, w)
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha, beta = norms[p], norms[q]
                if alpha == 0 or beta == 0:
                    continue
                gamma = w[:, p] @ w[:, q]
                if abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                c, s = _rotation(0.5 * (beta - alpha), gamma)
                wp, wq = w[:, p].copy(), w[:, q].copy()
                w[:, p] = c * wp - s * wq
                w[:, q] = s * wp + c * wq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
                norms[p] = w[:, p] @ w[:, p]
                norms[q] = w[:, q] @ w[:, q]
        if not rotated:
            break
    return _sort_and_sign(np.einsum("ij,ij->j", w, w), v, sweeps)
