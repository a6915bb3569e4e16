"""Dense reference assembly built from scratch for cross-checking.

Local bases come from inverting the monomial Vandermonde matrix at the
element nodes; integrals use a collapsed Gauss-Legendre rule. Nothing
here shares code with the package beyond the dof numbering.
"""

import numpy as np


def collapsed_rule(vertices, n=6):
    """Points and weights on a physical triangle from an n x n Duffy-mapped Gauss rule."""
    g, w = np.polynomial.legendre.leggauss(n)
    s, ws = 0.5 * (g + 1), 0.5 * w
    S, T = np.meshgrid(s, s, indexing="ij")
    W = np.outer(ws, ws) * (1 - S)
    xi, eta = S.ravel(), (T * (1 - S)).ravel()
    v0, v1, v2 = vertices
    J = np.column_stack([v1 - v0, v2 - v0])
    pts = v0 + np.column_stack([xi, eta]) @ J.T
    return pts, W.ravel() * abs(np.linalg.det(J))


def _mono2(p):
    x, y = p[..., 0], p[..., 1]
    one = np.ones_like(x)
    val = np.stack([one, x, y, x * x, x * y, y * y], axis=-1)
    zero = np.zeros_like(x)
    dx = np.stack([zero, one, zero, 2 * x, y, zero], axis=-1)
    dy = np.stack([zero, zero, one, zero, x, 2 * y], axis=-1)
    return val, np.stack([dx, dy], axis=-1)


def _mono1(p):
    x, y = p[..., 0], p[..., 1]
    return np.stack([np.ones_like(x), x, y], axis=-1)


def p2_local(nodes, pts):
    """Values (Q, 6) and gradients (Q, 6, 2) of the Lagrange basis at ``nodes``."""
    V, _ = _mono2(nodes)
    C = np.linalg.inv(V)
    val, grad = _mono2(pts)
    return val @ C, np.einsum("qmd,ma->qad", grad, C)


def p1_local(verts, pts):
    C = np.linalg.inv(_mono1(verts))
    return _mono1(pts) @ C


def _elements(space):
    for t, tri in enumerate(space.mesh.triangles):
        nodes = space.node_coords[space.cell_nodes[t]]
        yield t, tri, nodes


def dense_matrices(space):
    """Dense mass, stiffness, graddiv (n_vel x n_vel) and divergence (n_pre x n_vel)."""
    nv, npr = space.n_vel, space.n_pre
    M, A, G = (np.zeros((nv, nv)) for _ in range(3))
    B = np.zeros((npr, nv))
    for t, tri, nodes in _elements(space):
        pts, w = collapsed_rule(space.mesh.vertices[tri])
        N, dN = p2_local(nodes, pts)
        L = p1_local(space.mesh.vertices[tri], pts)
        for a in range(6):
            for c in range(2):
                i = 2 * space.cell_nodes[t, a] + c
                for b in range(6):
                    j = 2 * space.cell_nodes[t, b] + c
                    M[i, j] += w @ (N[:, a] * N[:, b])
                    A[i, j] += w @ np.sum(dN[:, a] * dN[:, b], axis=-1)
                for b in range(6):
                    for d in range(2):
                        j = 2 * space.cell_nodes[t, b] + d
                        G[i, j] += w @ (dN[:, a, c] * dN[:, b, d])
                for k in range(3):
                    B[tri[k], i] += w @ (L[:, k] * dN[:, a, c])
    return M, A, G, B


def field_at(space, coef, t, pts):
    """Value (Q, 2) and gradient (Q, 2, 2) of a velocity field on element ``t``."""
    nodes = space.node_coords[space.cell_nodes[t]]
    N, dN = p2_local(nodes, pts)
    ue = np.asarray(coef)[space.cell_vel_dofs[t]].reshape(6, 2)
    return N @ ue, np.einsum("qad,ac->qcd", dN, ue)


def element_loop(space, integrand):
    """Sum of ``w @ integrand(t, pts)`` over elements."""
    total = 0.0
    for t, tri, _ in _elements(space):
        pts, w = collapsed_rule(space.mesh.vertices[tri])
        total += w @ integrand(t, pts)
    return total


def trilinear(space, form, u, v, w):
    """b_form(u, v, w) with pointwise integrands written out by component."""
    def integrand(t, pts):
        uv, ug = field_at(space, u, t, pts)
        vv, vg = field_at(space, v, t, pts)
        wv, _ = field_at(space, w, t, pts)
        divu = ug[:, 0, 0] + ug[:, 1, 1]
        out = np.zeros(len(pts))
        for c in range(2):
            for d in range(2):
                if form == "skew":
                    out += uv[:, d] * vg[:, c, d] * wv[:, c]
                else:
                    out += (ug[:, c, d] + ug[:, d, c]) * vv[:, d] * wv[:, c]
            out += (0.5 if form == "skew" else 1.0) * divu * vv[:, c] * wv[:, c]
        return out
    return element_loop(space, integrand)
