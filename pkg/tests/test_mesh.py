import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poddiv.errors import FormatError, IntegrityError, UnsupportedError
from poddiv.mesh import Mesh, edge_table, load_msh, quadrature_rule, read_mesh, unit_square_mesh, write_mesh


def monomial_integral(a, b):
    """Exact integral of x^a y^b over the reference triangle."""
    return Fraction(math.factorial(a) * math.factorial(b), math.factorial(a + b + 2))


@pytest.mark.parametrize("n, verts, tris, bnd", [(1, 4, 2, 4), (4, 25, 32, 16), (16, 289, 512, 64)])
def test_unit_square_counts(n, verts, tris, bnd):
    m = unit_square_mesh(n)
    assert (m.n_vertices, m.n_triangles, len(m.boundary_edges)) == (verts, tris, bnd)
    assert m.markers() == {1}
    m.check()


def test_unit_square_h():
    assert unit_square_mesh(4).h == pytest.approx(math.sqrt(2) / 4, rel=1e-15)


def test_side_markers():
    m = unit_square_mesh(3, side_markers=True)
    assert m.markers() == {1, 2, 3, 4}
    for tag, (axis, value) in {1: (1, 0.0), 2: (0, 1.0), 3: (1, 1.0), 4: (0, 0.0)}.items():
        edges = m.boundary_edges[m.boundary_markers == tag]
        assert len(edges) == 3
        assert np.all(m.vertices[edges][..., axis] == value)


@given(st.integers(1, 12))
@settings(max_examples=12, deadline=None)
def test_mesh_invariants(n):
    m = unit_square_mesh(n)
    assert np.all(m.areas() > 0)
    assert abs(m.areas().sum() - 1.0) <= 1e-12
    edges, _, counts = edge_table(m.triangles)
    boundary = {tuple(e) for e in edges[counts == 1].tolist()}
    assert boundary == {tuple(e) for e in m.boundary_edges.tolist()}
    lengths = np.linalg.norm(m.vertices[m.triangles] - m.vertices[np.roll(m.triangles, 1, axis=1)], axis=-1)
    assert m.h == lengths.max()


def test_from_arrays_orients_clockwise_input():
    m = Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    assert m.areas()[0] == pytest.approx(0.5)


@pytest.mark.parametrize("tris, msg", [([[0, 1, 5]], "missing vertex"), ([[0, 1, 1]], "zero area"),
                                       (np.zeros((0, 3)), "no triangles")])
def test_from_arrays_rejects(tris, msg):
    with pytest.raises(IntegrityError, match=msg):
        Mesh.from_arrays([[0, 0], [1, 0], [0, 1]], tris)


def test_unsupported_grid_size():
    with pytest.raises(UnsupportedError):
        unit_square_mesh(0)


def test_dump_round_trip(tmp_path):
    m = unit_square_mesh(5, side_markers=True)
    write_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary_edges, m.boundary_edges)
    assert np.array_equal(back.boundary_markers, m.boundary_markers)


# --------------------------------------------------------------------------
# Gmsh files
# --------------------------------------------------------------------------

def _msh(body_nodes, body_elems, version="2.2 0 8"):
    nodes = "\n".join(body_nodes)
    elems = "\n".join(body_elems)
    return (f"$MeshFormat\n{version}\n$EndMeshFormat\n$Nodes\n{len(body_nodes)}\n{nodes}\n$EndNodes\n"
            f"$Elements\n{len(body_elems)}\n{elems}\n$EndElements\n")


SINGLE = (["1 0 0 0", "2 3 0 0", "3 0 1 0"],
          ["1 1 2 7 1 1 2", "2 1 2 8 2 2 3", "3 1 2 9 3 3 1", "4 2 2 0 1 1 2 3"])


def test_single_triangle(tmp_path):
    p = tmp_path / "one.msh"
    p.write_text(_msh(*SINGLE))
    m = load_msh(p)
    assert m.n_triangles == 1
    assert m.h == pytest.approx(math.sqrt(10))
    assert m.markers() == {7, 8, 9}


def test_unused_nodes_dropped(tmp_path):
    nodes, elems = SINGLE
    p = tmp_path / "extra.msh"
    p.write_text(_msh(nodes + ["4 5 5 0"], elems + ["5 15 2 0 4 4"]))
    assert load_msh(p).n_vertices == 3


@pytest.mark.parametrize("version", ["4.1 0 8", "2.2 1 8"])
def test_version_and_binary_rejected(tmp_path, version):
    p = tmp_path / "bad.msh"
    p.write_text(_msh(*SINGLE, version=version))
    with pytest.raises(FormatError):
        load_msh(p)


def test_quad_element_rejected(tmp_path):
    nodes, _ = SINGLE
    p = tmp_path / "quad.msh"
    p.write_text(_msh(nodes + ["4 1 1 0"], ["1 3 2 0 1 1 2 4 3"]))
    with pytest.raises(FormatError, match="element type 3"):
        load_msh(p)


def test_dangling_reference(tmp_path):
    nodes, _ = SINGLE
    p = tmp_path / "dangling.msh"
    p.write_text(_msh(nodes, ["1 2 2 0 1 1 2 9"]))
    with pytest.raises(IntegrityError):
        load_msh(p)


def test_missing_section(tmp_path):
    p = tmp_path / "empty.msh"
    p.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    with pytest.raises(FormatError, match="Nodes"):
        load_msh(p)


# --------------------------------------------------------------------------
# quadrature
# --------------------------------------------------------------------------

def test_midpoint_rule():
    q = quadrature_rule(1)
    assert q.points.shape == (1, 3)
    assert np.allclose(q.points, 1 / 3)
    assert q.weights.tolist() == [0.5]


@pytest.mark.parametrize("degree", range(1, 8))
def test_quadrature_exactness(degree):
    q = quadrature_rule(degree)
    assert abs(q.weights.sum() - 0.5) <= 1e-15
    x, y = q.xy[:, 0], q.xy[:, 1]
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = float(monomial_integral(a, b))
            assert abs(q.weights @ (x ** a * y ** b) - exact) <= 1e-14, (a, b)


def test_x2y2_integral():
    q = quadrature_rule(4)
    assert q.weights @ (q.xy[:, 0] ** 2 * q.xy[:, 1] ** 2) == pytest.approx(1 / 180, abs=1e-15)


@pytest.mark.parametrize("degree", [0, 8, 2.5])
def test_quadrature_degree_range(degree):
    with pytest.raises(UnsupportedError):
        quadrature_rule(degree)
