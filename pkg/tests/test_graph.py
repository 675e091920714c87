import json

import numpy as np
import pytest

from hybridskin.errors import DataError
from hybridskin.graph import (
    build_graph,
    clamp_node_count,
    influence_weights,
    load_graph,
    sample_control_nodes,
    save_graph,
)
from hybridskin.mesh import Mesh
from meshes import U_STRIP_GAP, U_STRIP_LENGTH, grid, u_strip, uv_sphere


def test_weight_formula_by_hand():
    w = influence_weights(np.array([[1.0, 2.0]]), np.array([4.0]))
    np.testing.assert_allclose(w, [[0.5625 / 0.8125, 0.25 / 0.8125]], rtol=1e-12)
    assert w[0, 0] == pytest.approx(0.692307692307, rel=1e-10)


def test_equal_distances_give_uniform_weights():
    w = influence_weights(np.array([[1.5, 1.5, 1.5, 1.5]]), np.array([3.0]))
    np.testing.assert_allclose(w, [[0.25] * 4])


def test_coincident_vertex_gets_raw_weight_one():
    w = influence_weights(np.array([[0.0, 1.0]]), np.array([2.0]))
    np.testing.assert_allclose(w, [[1.0 / 1.25, 0.25 / 1.25]])


def test_all_neighbors_at_dmax_fall_back_to_uniform():
    w = influence_weights(np.array([[2.0, 2.0, 2.0]]), np.array([2.0]))
    np.testing.assert_allclose(w, [[1 / 3, 1 / 3, 1 / 3]])


def test_fps_hand_simulated():
    # 5x2 grid; farthest from the corner is the opposite corner (3 + sqrt 2 away),
    # then vertices 2 and 7 tie at distance 2 and the smaller index wins
    mesh = grid(5, 2)
    assert sample_control_nodes(mesh, 3, seed_vertex=0) == [0, 9, 2]


def test_fps_exhaustion_and_single_node():
    mesh = grid(4, 3)
    nodes = sample_control_nodes(mesh, mesh.n_vertices)
    assert sorted(nodes) == list(range(mesh.n_vertices))
    assert nodes[0] == 0
    assert sample_control_nodes(mesh, 1, seed_vertex=5) == [5]
    assert sample_control_nodes(mesh, 7) == sample_control_nodes(mesh, 7)


def test_fps_range_and_reachability_errors():
    mesh = grid(3, 3)
    with pytest.raises(DataError):
        sample_control_nodes(mesh, 0)
    with pytest.raises(DataError):
        sample_control_nodes(mesh, mesh.n_vertices + 1)
    two_islands = Mesh(
        [(0, 0, 0), (1, 0, 0), (0, 1, 0), (5, 0, 0), (6, 0, 0), (5, 1, 0)],
        [(0, 1, 2), (3, 4, 5)],
    )
    with pytest.raises(DataError):
        sample_control_nodes(two_islands, 4)


def test_sphere_graph_contract():
    mesh = uv_sphere()
    nodes = sample_control_nodes(mesh, 64)
    graph = build_graph(mesh, nodes, n_neighbor=4)
    assert graph.n_nodes == 64
    assert graph.neighbors.shape == (482, 4)
    np.testing.assert_allclose(graph.weights.sum(axis=1), 1.0, atol=1e-12)
    assert (graph.weights >= 0.0).all()
    assert (np.diff(graph.distances, axis=1) >= 0.0).all()
    # closer nodes never weigh less
    assert (np.diff(graph.weights, axis=1) <= 1e-15).all()
    assert all(len(set(row)) == 4 for row in graph.neighbors.tolist())


def test_node_vertex_is_its_own_first_neighbor():
    mesh = grid(6, 6)
    nodes = sample_control_nodes(mesh, 10)
    graph = build_graph(mesh, nodes, 3)
    for k, v in enumerate(nodes):
        assert graph.neighbors[v, 0] == k
        assert graph.distances[v, 0] == 0.0


def _cross_gap_count(mesh, graph):
    lower = mesh.vertices[:, 1] <= U_STRIP_GAP[0]
    node_lower = lower[graph.node_vertex_ids]
    near_end = mesh.vertices[:, 0] <= U_STRIP_LENGTH / 2
    crossing = node_lower[graph.neighbors] != lower[:, None]
    return int(crossing[near_end].sum())


def test_geodesic_neighbors_do_not_cross_the_gap():
    mesh = u_strip()
    nodes = list(range(mesh.n_vertices))
    geodesic = build_graph(mesh, nodes, 4, "geodesic")
    euclidean = build_graph(mesh, nodes, 4, "euclidean")
    assert _cross_gap_count(mesh, geodesic) == 0
    assert _cross_gap_count(mesh, euclidean) >= 1


def test_too_few_nodes_and_disconnected():
    mesh = grid(3, 3)
    with pytest.raises(DataError):
        build_graph(mesh, [0, 1, 2, 3], n_neighbor=4)
    two_islands = Mesh(
        [(0, 0, 0), (1, 0, 0), (0, 1, 0), (5, 0, 0), (6, 0, 0), (5, 1, 0)],
        [(0, 1, 2), (3, 4, 5)],
    )
    with pytest.raises(DataError) as e:
        build_graph(two_islands, [0, 1, 3, 4], n_neighbor=2)
    assert e.value.vertex is not None
    with pytest.raises(DataError):
        build_graph(mesh, [0, 1, 2], n_neighbor=1, metric="manhattan")


def test_clamp_node_count_warns(caplog):
    mesh = grid(3, 3)
    assert clamp_node_count(mesh, 4) == (4, [])
    with caplog.at_level("WARNING"):
        n, warnings = clamp_node_count(mesh, 1024)
    assert n == 9
    assert warnings == ["node_count_clamped"]
    assert "node_count_clamped" in caplog.text


def test_graph_json_round_trip(tmp_path):
    mesh = grid(5, 4)
    graph = build_graph(mesh, sample_control_nodes(mesh, 8), 4, "euclidean")
    path = tmp_path / "graph.json"
    save_graph(path, graph)
    data = json.loads(path.read_text())
    assert data["metric"] == "euclidean"
    assert len(data["vertices"]) == mesh.n_vertices
    again = load_graph(path, mesh)
    assert np.array_equal(again.node_vertex_ids, graph.node_vertex_ids)
    assert np.array_equal(again.neighbors, graph.neighbors)
    np.testing.assert_array_equal(again.weights, graph.weights)


def test_invalid_graph_document(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"nodes": [0, 1], "metric": "geodesic", "vertices": [{"neighbors": [0, 1], "weights": [0.9, 0.3]}]}))
    with pytest.raises(DataError):
        load_graph(path)
    path.write_text("{not json")
    with pytest.raises(DataError):
        load_graph(path)
