import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ruled_approx.mesh import (
    TriangleMesh,
    MeshParseError,
    MeshTopologyError,
    MeshDegeneracyError,
    load_obj,
    save_obj,
    normalize_unit_diagonal,
)

from synthetic import tetrahedron, torus_mesh, grid_mesh


SINGLE_TRI = """\
v 0 0 0
v 1 0 0
v 0 1 0
f 1 2 3
"""

QUAD = """\
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
f 1 2 3 4
"""

TETRA = """\
v 0 0 0
v 1 0 0
v 0.5 1 0
v 0.5 0.4 1
f 1 3 2
f 1 2 4
f 2 3 4
f 3 1 4
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_single_triangle(tmp_path):
    m = load_obj(write(tmp_path, "t.obj", SINGLE_TRI))
    assert m.n_vertices == 3
    assert m.n_faces == 1
    assert m.n_edges == 3
    assert m.boundary_edge.all()


def test_load_tetrahedron(tmp_path):
    m = load_obj(write(tmp_path, "t.obj", TETRA))
    assert (m.n_vertices, m.n_faces, m.n_edges) == (4, 4, 6)
    assert not m.boundary_edge.any()
    # Euler formula V - E + F = 2 for a closed genus-0 mesh
    assert m.euler_characteristic() == 2


def test_load_quad_fan_triangulation(tmp_path):
    # fan anchored at the first polygon vertex: (0,1,2), (0,2,3)
    m = load_obj(write(tmp_path, "q.obj", QUAD))
    assert m.n_faces == 2
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]
    shared = set(map(tuple, m.edges[~m.boundary_edge]))
    assert shared == {(0, 2)}  # quad diagonal


def test_load_obj_slash_forms(tmp_path):
    text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvn 0 0 1\nf 1/1/1 2/1/1 3/1/1\n"
    m = load_obj(write(tmp_path, "s.obj", text))
    assert m.n_faces == 1


def test_load_errors(tmp_path):
    with pytest.raises(MeshParseError):
        load_obj(write(tmp_path, "a.obj", "v 0 0\nf 1 1 1\n"))
    with pytest.raises(MeshParseError):
        load_obj(write(tmp_path, "b.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"))
    with pytest.raises(MeshParseError):
        load_obj(write(tmp_path, "c.obj", "v 0 0 0\n"))


def test_nonmanifold_edge_rejected():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1.0]])
    F = np.array([[0, 1, 2], [0, 3, 1], [0, 1, 4]])
    with pytest.raises(MeshTopologyError):
        TriangleMesh(V, F)


def test_inconsistent_orientation_rejected():
    V = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    # second face traverses shared edge (1,2) in the same direction
    F = np.array([[0, 1, 2], [1, 2, 3]])
    with pytest.raises(MeshTopologyError):
        TriangleMesh(V, F)


def test_zero_area_face_rejected():
    V = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0.0]])
    F = np.array([[0, 1, 2], [0, 3, 1]])
    with pytest.raises(MeshDegeneracyError):
        TriangleMesh(V, F)


def test_torus_euler_characteristic():
    m = torus_mesh()
    assert m.euler_characteristic() == 0
    assert not m.boundary_edge.any()


def test_adjacency_symmetry():
    m = grid_mesh(4, 3)
    for e in range(m.n_edges):
        for f in m.edge_faces[e]:
            if f >= 0:
                assert e in m.face_edges[f]
    for f in range(m.n_faces):
        for e in m.face_edges[f]:
            assert f in m.edge_faces[e]


def test_normalize_cube_corners():
    # unit cube corners: bbox diagonal sqrt(3), so scale = 1/sqrt(3)
    V = np.array([
        [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
        [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1.0],
    ])
    F = np.array([[0, 1, 2], [0, 2, 3], [4, 6, 5], [4, 7, 6],
                  [0, 4, 5], [0, 5, 1], [2, 6, 7], [2, 7, 3]])
    m = TriangleMesh(V, F)
    norm, t = normalize_unit_diagonal(m)
    assert abs(t.scale - 1 / np.sqrt(3)) < 1e-12
    assert abs(norm.bbox_diagonal() - 1.0) < 1e-12


def test_normalize_idempotent():
    m = grid_mesh(3, 3, height=lambda x, y: x * y)
    n1, _ = normalize_unit_diagonal(m)
    n2, t2 = normalize_unit_diagonal(n1)
    assert abs(t2.scale - 1.0) < 1e-12
    assert np.allclose(n1.vertices, n2.vertices, atol=1e-12)


def test_normalize_round_trip():
    rng = np.random.default_rng(7)
    base = grid_mesh(9, 9, height=lambda x, y: np.sin(x) * y)
    V = base.vertices * 37.5 + rng.normal(0, 1e-3, base.vertices.shape) + [4.0, -2.0, 11.0]
    m = TriangleMesh(V, base.faces)
    norm, t = normalize_unit_diagonal(m)
    back = t.to_original(norm.vertices)
    assert np.abs(back - m.vertices).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 1e3), st.lists(st.floats(-100, 100), min_size=3, max_size=3))
def test_normalize_diag_property(scale, shift):
    m = grid_mesh(2, 2, height=lambda x, y: x + 0.3 * y)
    m = TriangleMesh(m.vertices * scale + np.array(shift), m.faces)
    norm, t = normalize_unit_diagonal(m)
    assert abs(norm.bbox_diagonal() - 1.0) < 1e-9
    assert np.allclose(t.to_original(norm.vertices), m.vertices, rtol=1e-9, atol=1e-7)


def test_save_load_round_trip_tetra(tmp_path):
    m = tetrahedron()
    p = tmp_path / "t.obj"
    save_obj(m, p)
    m2 = load_obj(p)
    assert m2.faces.tolist() == m.faces.tolist()
    assert np.abs(m2.vertices - m.vertices).max() < 1e-9


def test_save_load_round_trip_1k(tmp_path):
    m = grid_mesh(31, 31, height=lambda x, y: 0.3 * np.sin(3 * x) * np.cos(2 * y))
    assert m.n_vertices == 1024
    p = tmp_path / "g.obj"
    save_obj(m, p)
    m2 = load_obj(p)
    assert np.abs(m2.vertices - m.vertices).max() < 1e-9
    assert m2.faces.tolist() == m.faces.tolist()


def test_save_empty_rejected(tmp_path):
    with pytest.raises(MeshParseError):
        TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def test_edge_index_lookup():
    m = grid_mesh(2, 2)
    for e, (a, b) in enumerate(m.edges):
        assert m.edge_index(int(a), int(b)) == e
        assert m.edge_index(int(b), int(a)) == e
    with pytest.raises(KeyError):
        m.edge_index(0, m.n_vertices - 1)
