"""Triangular meshes of 2D domains, Gmsh import, and triangle quadrature.

Reference triangle is ``{x, y >= 0, x + y <= 1}`` with barycentric
coordinates ``(1 - x - y, x, y)``.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, IntegrityError, UnsupportedError

__all__ = [
    "Mesh",
    "QuadratureRule",
    "unit_square_mesh",
    "load_msh",
    "write_mesh",
    "read_mesh",
    "quadrature_rule",
    "edge_table",
]


def edge_table(triangles):
    """Unique undirected edges of a triangulation.

    Returns
    -------
    edges : (E, 2) int array
        Sorted endpoint pairs, rows in ascending lexicographic order.
    tri_edges : (T, 3) int array
        Edge index of local edges (v0, v1), (v1, v2), (v2, v0).
    counts : (E,) int array
        Number of triangles sharing each edge.
    """
    tri = np.asarray(triangles, dtype=np.int64)
    local = tri[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 3, 2)
    pairs = np.sort(local.reshape(-1, 2), axis=1)
    edges, inverse, counts = np.unique(pairs, axis=0, return_inverse=True, return_counts=True)
    return edges, inverse.reshape(-1, 3), counts


def _signed_areas(vertices, triangles):
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    d1, d2 = p1 - p0, p2 - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _max_edge(vertices, triangles):
    if len(triangles) == 0:
        return 0.0
    p = vertices[triangles]
    lengths = np.linalg.norm(p - np.roll(p, -1, axis=1), axis=2)
    return float(lengths.max())


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with marked boundary edges.

    Attributes
    ----------
    vertices : (V, 2) float array
    triangles : (T, 3) int array, counterclockwise
    boundary_edges : (B, 2) int array, sorted endpoint pairs
    boundary_markers : (B,) int array
    h : float
        Longest edge length over all triangles.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray
    h: float = field(init=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        bnd = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        marks = np.ascontiguousarray(self.boundary_markers, dtype=np.int64).reshape(-1)
        if len(bnd) != len(marks):
            raise IntegrityError("boundary edge and marker counts differ")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise IntegrityError("triangle references a missing vertex")
        bnd = np.sort(bnd, axis=1)
        for name, arr in (("vertices", verts), ("triangles", tris),
                          ("boundary_edges", bnd), ("boundary_markers", marks)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "h", _max_edge(verts, tris))

    @classmethod
    def from_arrays(cls, vertices, triangles, markers=None, default_marker=0):
        """Build a mesh, orienting triangles and deriving boundary edges.

        ``markers`` maps sorted vertex pairs ``(i, j)`` to an integer tag;
        boundary edges missing from it get ``default_marker``. Tagged
        pairs that are not boundary edges raise :class:`IntegrityError`.
        """
        verts = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
        tris = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if len(tris) == 0:
            raise IntegrityError("mesh has no triangles")
        if tris.min() < 0 or tris.max() >= len(verts):
            raise IntegrityError("triangle references a missing vertex")
        area = _signed_areas(verts, tris)
        if np.any(area == 0.0):
            raise IntegrityError("degenerate triangle with zero area")
        flip = area < 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        edges, _, counts = edge_table(tris)
        if np.any(counts > 2):
            raise IntegrityError("non-manifold edge shared by more than two triangles")
        bnd = edges[counts == 1]
        lookup = {(int(a), int(b)): k for k, (a, b) in enumerate(bnd)}
        marks = np.full(len(bnd), default_marker, dtype=np.int64)
        for pair, tag in (markers or {}).items():
            key = (min(pair), max(pair))
            k = lookup.get(key)
            if k is None:
                raise IntegrityError(f"tagged edge {key} is not a boundary edge")
            marks[k] = tag
        return cls(verts, tris, bnd, marks)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def areas(self) -> np.ndarray:
        return _signed_areas(self.vertices, self.triangles)

    def markers(self) -> set[int]:
        return {int(m) for m in self.boundary_markers}

    def check(self):
        """Raise :class:`IntegrityError` if any mesh invariant is violated."""
        if self.n_triangles == 0:
            raise IntegrityError("mesh has no triangles")
        if np.any(self.areas() <= 0):
            raise IntegrityError("triangle with non-positive signed area")
        edges, _, counts = edge_table(self.triangles)
        bset = {tuple(e) for e in edges[counts == 1].tolist()}
        given = [tuple(e) for e in self.boundary_edges.tolist()]
        if len(set(given)) != len(given) or set(given) != bset:
            raise IntegrityError("boundary edge list does not match the triangulation")
        if not np.isclose(self.h, _max_edge(self.vertices, self.triangles)):
            raise IntegrityError("stored h differs from longest edge")


def unit_square_mesh(n: int, side_markers: bool = False) -> Mesh:
    """Uniform ``n x n`` grid of the unit square, two triangles per cell.

    Each cell is cut along its lower-left to upper-right diagonal. All
    boundary edges get marker 1 unless ``side_markers`` is set, in which
    case bottom, right, top, left get markers 1, 2, 3, 4.
    """
    if int(n) != n or n < 1:
        raise UnsupportedError(f"grid size must be a positive integer, got {n!r}")
    n = int(n)
    s = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v0 = (j * (n + 1) + i).ravel()
    v1, v2, v3 = v0 + 1, v0 + n + 2, v0 + n + 1
    tris = np.empty((2 * n * n, 3), dtype=np.int64)
    tris[0::2] = np.column_stack([v0, v1, v2])
    tris[1::2] = np.column_stack([v0, v2, v3])
    markers = {}
    for k in range(n):
        sides = {
            1: (k, k + 1),
            2: (k * (n + 1) + n, (k + 1) * (n + 1) + n),
            3: (n * (n + 1) + k, n * (n + 1) + k + 1),
            4: (k * (n + 1), (k + 1) * (n + 1)),
        }
        for tag, pair in sides.items():
            markers[pair] = tag if side_markers else 1
    return Mesh.from_arrays(verts, tris, markers)


# --------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII
# --------------------------------------------------------------------------

_GMSH_LINE, _GMSH_TRIANGLE, _GMSH_POINT = 1, 2, 15
_GMSH_SURFACE_TYPES = {2, 3, 9, 10, 16, 20, 21, 22, 23, 24, 25}


def _sections(lines):
    out, k = {}, 0
    while k < len(lines):
        tag = lines[k].strip()
        if tag.startswith("$") and not tag.startswith("$End"):
            name = tag[1:]
            end = "$End" + name
            body = []
            k += 1
            while k < len(lines) and lines[k].strip() != end:
                body.append(lines[k])
                k += 1
            if k == len(lines):
                raise FormatError(f"section ${name} is not terminated")
            out.setdefault(name, body)
        k += 1
    return out


def load_msh(path) -> Mesh:
    """Read a Gmsh MSH 2.2 ASCII file with triangle elements.

    Boundary markers are the physical tags of 2-node line elements.
    Nodes not used by any triangle are dropped (order preserved).
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read ({exc})") from exc
    sec = _sections(lines)
    for name in ("MeshFormat", "Nodes", "Elements"):
        if name not in sec:
            raise FormatError(f"{path}: missing ${name} section")
    fmt = sec["MeshFormat"][0].split()
    if len(fmt) < 2 or fmt[0] not in ("2.2", "2.2.0"):
        raise FormatError(f"{path}: unsupported MSH version {fmt[0] if fmt else '?'} (need 2.2)")
    if fmt[1] != "0":
        raise FormatError(f"{path}: binary MSH files are not supported")
    try:
        n_nodes = int(sec["Nodes"][0])
        node_ids, coords = [], []
        for line in sec["Nodes"][1:1 + n_nodes]:
            parts = line.split()
            node_ids.append(int(parts[0]))
            coords.append((float(parts[1]), float(parts[2])))
        if len(node_ids) != n_nodes:
            raise FormatError(f"{path}: expected {n_nodes} nodes, found {len(node_ids)}")
        n_elem = int(sec["Elements"][0])
        tris, lines_tagged = [], []
        for line in sec["Elements"][1:1 + n_elem]:
            parts = [int(v) for v in line.split()]
            etype, ntags = parts[1], parts[2]
            tags, conn = parts[3:3 + ntags], parts[3 + ntags:]
            if etype == _GMSH_TRIANGLE:
                tris.append(conn[:3])
            elif etype == _GMSH_LINE:
                lines_tagged.append((conn[0], conn[1], tags[0] if tags else 0))
            elif etype in _GMSH_SURFACE_TYPES:
                raise FormatError(f"{path}: unsupported 2D element type {etype}")
            elif etype != _GMSH_POINT:
                raise FormatError(f"{path}: unsupported element type {etype}")
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed record ({exc})") from exc
    if not tris:
        raise FormatError(f"{path}: no triangle elements")
    index = {nid: k for k, nid in enumerate(node_ids)}
    if len(index) != len(node_ids):
        raise IntegrityError(f"{path}: duplicate node ids")
    try:
        tri_idx = np.array([[index[v] for v in t] for t in tris], dtype=np.int64)
        line_idx = [(index[a], index[b], tag) for a, b, tag in lines_tagged]
    except KeyError as exc:
        raise IntegrityError(f"{path}: element references undefined node {exc.args[0]}") from exc
    used = np.unique(tri_idx)
    remap = np.full(len(node_ids), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = np.asarray(coords, dtype=np.float64)[used]
    markers = {}
    for a, b, tag in line_idx:
        if remap[a] < 0 or remap[b] < 0:
            raise IntegrityError(f"{path}: boundary line uses a node outside the triangulation")
        markers[(int(remap[a]), int(remap[b]))] = tag
    return Mesh.from_arrays(verts, remap[tri_idx], markers)


# --------------------------------------------------------------------------
# Plain-text dump
# --------------------------------------------------------------------------

def write_mesh(mesh: Mesh, path):
    """Write the VERTICES / TRIANGLES / BOUNDARY text dump atomically."""
    out = [f"VERTICES {mesh.n_vertices}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist()]
    out.append(f"TRIANGLES {mesh.n_triangles}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles.tolist()]
    out.append(f"BOUNDARY {len(mesh.boundary_edges)}")
    out += [f"{a} {b} {m}" for (a, b), m in zip(mesh.boundary_edges.tolist(),
                                                 mesh.boundary_markers.tolist())]
    text = "\n".join(out) + "\n"
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_mesh(path) -> Mesh:
    """Read a mesh written by :func:`write_mesh`."""
    lines = Path(path).read_text().splitlines()
    k = 0

    def block(name, conv):
        nonlocal k
        head = lines[k].split()
        if len(head) != 2 or head[0] != name:
            raise FormatError(f"{path}: expected {name} header at line {k + 1}")
        count = int(head[1])
        rows = [[conv(v) for v in ln.split()] for ln in lines[k + 1:k + 1 + count]]
        k += 1 + count
        return rows

    try:
        verts = block("VERTICES", float)
        tris = block("TRIANGLES", int)
        bnd = block("BOUNDARY", int)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed mesh dump ({exc})") from exc
    bnd = np.asarray(bnd, dtype=np.int64).reshape(-1, 3)
    mesh = Mesh(np.asarray(verts).reshape(-1, 2), np.asarray(tris, dtype=np.int64).reshape(-1, 3),
                bnd[:, :2], bnd[:, 2])
    mesh.check()
    return mesh


# --------------------------------------------------------------------------
# Quadrature
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Symmetric rule on the reference triangle.

    ``points`` holds barycentric coordinates (Q, 3); ``weights`` sum to 1/2.
    """

    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def xy(self) -> np.ndarray:
        """Reference Cartesian coordinates (Q, 2)."""
        return self.points[:, 1:]


def _expand(orbits):
    pts, wts = [], []
    for kind, params, w in orbits:
        if kind == "c":
            orbit = [(1 / 3, 1 / 3, 1 / 3)]
        elif kind == "s21":
            a = params[0]
            b = 1.0 - 2.0 * a
            orbit = [(b, a, a), (a, b, a), (a, a, b)]
        else:
            a, b = params
            c = 1.0 - a - b
            orbit = [(a, b, c), (b, a, c), (a, c, b), (c, a, b), (b, c, a), (c, b, a)]
        pts += orbit
        wts += [0.5 * w] * len(orbit)
    return np.array(pts), np.array(wts)


# Dunavant orbits; parameters refined by Newton on the monomial moments.
_ORBITS = {
    1: [("c", (), 1.0)],
    2: [("s21", (1 / 6,), 1 / 3)],
    3: [("c", (), -0.5625), ("s21", (0.2,), 0.52083333333333333333)],
    4: [("s21", (0.44594849091596488632,), 0.2233815896780114657),
        ("s21", (0.09157621350977074346,), 0.10995174365532186764)],
    5: [("c", (), 0.225),
        ("s21", (0.47014206410511508977,), 0.13239415278850618074),
        ("s21", (0.1012865073234563388,), 0.1259391805448271526)],
    6: [("s21", (0.24928674517091042129,), 0.11678627572637936603),
        ("s21", (0.06308901449150222834,), 0.050844906370206816921),
        ("s111", (0.053145049844816947353, 0.31035245103378440542), 0.082851075618373575194)],
    7: [("c", (), -0.14957004446768175063),
        ("s21", (0.26034596607903982693,), 0.17561525743320781175),
        ("s21", (0.065130102902215811538,), 0.05334723560883849127),
        ("s111", (0.048690315425316411793, 0.31286549600487386141), 0.07711376089025714026)],
}

_RULES: dict[int, QuadratureRule] = {}


def quadrature_rule(degree: int) -> QuadratureRule:
    """Symmetric triangle rule exact for polynomials of total ``degree``."""
    if int(degree) != degree or not 1 <= degree <= 7:
        raise UnsupportedError(f"quadrature degree must be in 1..7, got {degree!r}")
    degree = int(degree)
    if degree not in _RULES:
        pts, wts = _expand(_ORBITS[degree])
        pts.setflags(write=False)
        wts.setflags(write=False)
        _RULES[degree] = QuadratureRule(degree, pts, wts)
    return _RULES[degree]
