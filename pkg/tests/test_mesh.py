import numpy as np
import pytest

from hybridskin.errors import DataError, ObjParseError
from hybridskin.mesh import (
    Mesh,
    cotangent_weights,
    face_normals,
    load_obj,
    multi_source_geodesic,
    one_ring,
    write_obj,
)
from meshes import grid, jittered_grid, uv_sphere


def _write(tmp_path, text, name="m.obj"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _floyd_warshall(mesh):
    n = mesh.n_vertices
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0.0)
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    d[i, j] = mesh.edge_lengths
    d[j, i] = mesh.edge_lengths
    for k in range(n):
        d = np.minimum(d, d[:, k:k + 1] + d[k:k + 1, :])
    return d


def _path_mesh():
    # bottom row v0..v3 at unit spacing; apexes far above so the bottom row is the shortest path
    vertices = [(float(i), 0.0, 0.0) for i in range(4)] + [(i + 0.5, 10.0, 0.0) for i in range(3)]
    faces = [(0, 1, 4), (1, 2, 5), (2, 3, 6)]
    return Mesh(vertices, faces)


def test_load_single_triangle(tmp_path):
    mesh = load_obj(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"))
    assert mesh.n_vertices == 3
    assert mesh.n_faces == 1
    assert len(mesh.edges) == 3
    assert len(mesh.face_adjacency) == 0


def test_quad_is_fan_triangulated(tmp_path):
    text = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n"
    mesh = load_obj(_write(tmp_path, text))
    assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_negative_indices(tmp_path):
    mesh = load_obj(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n"))
    assert mesh.faces.tolist() == [[0, 1, 2]]


def test_out_of_range_face_index(tmp_path):
    with pytest.raises(DataError) as e:
        load_obj(_write(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"))
    assert "line 4" in str(e.value)


def test_parse_error_carries_line(tmp_path):
    with pytest.raises(ObjParseError) as e:
        load_obj(_write(tmp_path, "v 0 0 0\nv 1 zero 0\n"))
    assert e.value.line == 2
    assert "line 2" in str(e.value)


def test_non_utf8_bytes(tmp_path):
    path = tmp_path / "latin1.obj"
    path.write_bytes(b"# \xff\xfe caf\xe9\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    assert load_obj(path).n_faces == 1
    path.write_bytes(b"v 0 0 0\nv 1 0 0\nv 0 1 \xe9\nf 1 2 3\n")
    with pytest.raises(ObjParseError) as e:
        load_obj(path)
    assert e.value.line == 3


def test_empty_mesh(tmp_path):
    with pytest.raises(DataError):
        load_obj(_write(tmp_path, "# nothing here\n"))


def test_repeated_index_and_nonmanifold_rejected():
    with pytest.raises(DataError):
        Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 1)])
    vertices = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1)]
    with pytest.raises(DataError):
        Mesh(vertices, [(0, 1, 2), (1, 0, 3), (0, 1, 4)])


def test_obj_round_trip(tmp_path):
    mesh = jittered_grid(np.random.default_rng(3))
    path = tmp_path / "out.obj"
    write_obj(path, mesh)
    again = load_obj(path)
    np.testing.assert_allclose(again.vertices, mesh.vertices, atol=1e-6)
    assert np.array_equal(again.faces, mesh.faces)


def test_edges_are_union_of_face_edges():
    mesh = grid(4, 3)
    expected = set()
    for a, b, c in mesh.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            expected.add((min(u, v), max(u, v)))
    assert {tuple(e) for e in mesh.edges.tolist()} == expected
    assert len(mesh.face_adjacency) == len(mesh.face_adjacency_edges)


def test_one_ring_center_of_grid():
    mesh = grid(3, 3)
    # center vertex 4; diagonals of the grid run from (i, j) to (i + 1, j + 1)
    assert one_ring(mesh, 4) == {0, 1, 3, 5, 7, 8}


def test_one_ring_single_triangle_and_isolated_vertex():
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0), (5, 5, 5)], [(0, 1, 2)])
    assert one_ring(mesh, 0) == {1, 2}
    assert one_ring(mesh, 3) == set()
    with pytest.raises(DataError):
        one_ring(mesh, 4)


def test_cotangent_equilateral_interior_edge():
    h = np.sqrt(3.0) / 2.0
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0.5, h, 0), (0.5, -h, 0)], [(0, 1, 2), (1, 0, 3)])
    w = cotangent_weights(mesh)
    assert w[0, 1] == pytest.approx(1.0 / np.sqrt(3.0), rel=1e-12)
    assert w[0, 1] == w[1, 0]


def test_cotangent_right_angle_is_zero():
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    w = cotangent_weights(mesh)
    assert abs(w[1, 2]) < 1e-15
    assert w[0, 1] == pytest.approx(0.5, rel=1e-12)


def test_cotangent_matches_angle_oracle_and_is_symmetric():
    mesh = jittered_grid(np.random.default_rng(0), 5, 5, amount=0.1)
    w = cotangent_weights(mesh).toarray()
    assert np.allclose(w, w.T, atol=0.0)
    oracle = np.zeros_like(w)
    for face in mesh.faces:
        for k in range(3):
            o, i, j = face[k], face[(k + 1) % 3], face[(k + 2) % 3]
            a = mesh.vertices[i] - mesh.vertices[o]
            b = mesh.vertices[j] - mesh.vertices[o]
            angle = np.arccos(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))
            oracle[i, j] += 0.5 / np.tan(angle)
            oracle[j, i] += 0.5 / np.tan(angle)
    np.testing.assert_allclose(w, oracle, atol=1e-12)


def test_zero_area_face_named():
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (2, 0, 0), (0, 1, 0)], [(0, 1, 3), (0, 1, 2)])
    with pytest.raises(DataError) as e:
        cotangent_weights(mesh)
    assert e.value.face == 1


def test_geodesic_path():
    dist, nearest = multi_source_geodesic(_path_mesh(), {0})
    np.testing.assert_allclose(dist[:4], [0.0, 1.0, 2.0, 3.0])
    assert (nearest == 0).all()


def test_geodesic_all_sources():
    mesh = grid(4, 4)
    dist, nearest = multi_source_geodesic(mesh, range(mesh.n_vertices))
    assert (dist == 0.0).all()
    assert nearest.tolist() == list(range(mesh.n_vertices))


def test_geodesic_matches_floyd_warshall():
    rng = np.random.default_rng(1)
    meshes = [grid(7, 5)]
    for _ in range(20):
        nx, ny = rng.integers(3, 15, size=2)
        meshes.append(jittered_grid(rng, int(nx), int(ny), amount=0.2))
    for mesh in meshes:
        assert mesh.n_vertices <= 200
        oracle = _floyd_warshall(mesh)
        sources = sorted({int(s) for s in rng.integers(0, mesh.n_vertices, size=3)})
        dist, nearest = multi_source_geodesic(mesh, sources)
        best = oracle[sources].min(axis=0)
        np.testing.assert_allclose(dist, best, rtol=1e-12, atol=0.0)
        np.testing.assert_allclose(oracle[nearest, np.arange(mesh.n_vertices)], best, rtol=1e-12, atol=0.0)


def test_geodesic_tie_goes_to_smallest_source():
    dist, nearest = multi_source_geodesic(_path_mesh(), {2, 0})
    assert dist[1] == 1.0
    assert nearest[1] == 0


def test_geodesic_triangle_inequality():
    mesh = uv_sphere(8, 12)
    rng = np.random.default_rng(2)
    for u, x, w in rng.integers(0, mesh.n_vertices, size=(50, 3)):
        du, _ = multi_source_geodesic(mesh, {int(u)})
        dx, _ = multi_source_geodesic(mesh, {int(x)})
        assert du[w] <= du[x] + dx[w] + 1e-12


def test_unreachable_vertex():
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0), (5, 5, 5)], [(0, 1, 2)])
    dist, nearest = multi_source_geodesic(mesh, [0])
    assert np.isinf(dist[3])
    assert nearest[3] == -1
    with pytest.raises(DataError):
        multi_source_geodesic(mesh, [])


def test_face_normals():
    mesh = Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])
    np.testing.assert_allclose(face_normals(mesh, mesh.vertices), [[0.0, 0.0, 1.0]])
    flipped = Mesh([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 2, 1)])
    np.testing.assert_allclose(face_normals(flipped, flipped.vertices), [[0.0, 0.0, -1.0]])
    with pytest.raises(DataError) as e:
        face_normals(mesh, [(0, 0, 0), (1, 0, 0), (2, 0, 0)])
    assert e.value.face == 0


def test_sphere_fixture_size():
    mesh = uv_sphere()
    assert mesh.n_vertices == 482
    assert len(mesh.face_adjacency) == len(mesh.edges)
