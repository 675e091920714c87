import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.sparse import csgraph
from scipy.spatial.distance import cdist

from .errors import DataError
from .mesh import Mesh
from .models import GraphDoc, GraphVertexDoc


logger = logging.getLogger("hybridskin.graph")

DEFAULT_N_NODE = 1024
DEFAULT_N_NEIGHBOR = 4
METRICS = ("geodesic", "euclidean")


@dataclass(frozen=True)
class DeformationGraph:
    node_vertex_ids: np.ndarray
    neighbors: np.ndarray
    weights: np.ndarray
    metric: str = "geodesic"
    # metric distances of each neighbor; only present on freshly built graphs
    distances: Optional[np.ndarray] = None

    @property
    def n_nodes(self) -> int:
        return len(self.node_vertex_ids)

    @property
    def n_neighbor(self) -> int:
        return self.neighbors.shape[1]

    @property
    def n_vertices(self) -> int:
        return self.neighbors.shape[0]

    def check_mesh(self, mesh: Mesh) -> None:
        if self.n_vertices != mesh.n_vertices:
            raise DataError(f"graph covers {self.n_vertices} vertices, mesh has {mesh.n_vertices}")
        if self.node_vertex_ids.max() >= mesh.n_vertices:
            raise DataError("graph node refers to a vertex outside the mesh")


def clamp_node_count(mesh: Mesh, n_node: int) -> Tuple[int, List[str]]:
    if n_node <= mesh.n_vertices:
        return n_node, []
    logger.warning(json.dumps({"event": "node_count_clamped", "requested": n_node, "used": mesh.n_vertices}))
    return mesh.n_vertices, ["node_count_clamped"]


def sample_control_nodes(mesh: Mesh, n_node: int = DEFAULT_N_NODE, seed_vertex: int = 0) -> List[int]:
    """Geodesic farthest-point sampling over the edge graph.

    Starts at seed_vertex; every next node is the reachable vertex farthest from the
    nodes chosen so far, smallest vertex index on ties.
    """
    n = mesh.n_vertices
    if not 1 <= n_node <= n:
        raise DataError(f"n_node must be in [1, {n}], got {n_node}")
    if not 0 <= seed_vertex < n:
        raise DataError(f"seed vertex {seed_vertex} out of range [0, {n})", vertex=seed_vertex)
    dist = csgraph.dijkstra(mesh.adjacency, directed=False, indices=seed_vertex)
    reachable = np.isfinite(dist)
    if int(reachable.sum()) < n_node:
        raise DataError(
            f"only {int(reachable.sum())} vertices are reachable from seed {seed_vertex}; cannot place {n_node} nodes"
        )
    chosen = [seed_vertex]
    taken = ~reachable
    taken[seed_vertex] = True
    for _ in range(n_node - 1):
        nxt = int(np.argmax(np.where(taken, -1.0, dist)))
        chosen.append(nxt)
        taken[nxt] = True
        dist = np.minimum(dist, csgraph.dijkstra(mesh.adjacency, directed=False, indices=nxt))
    return chosen


def influence_weights(distances: np.ndarray, d_max: np.ndarray) -> np.ndarray:
    """Normalized (1 - d/d_max)^2 weights; rows with all-zero raw weight become uniform."""
    d = np.asarray(distances, dtype=np.float64)
    dm = np.asarray(d_max, dtype=np.float64)[..., None]
    k = d.shape[-1]
    safe = np.where(dm > 0.0, dm, 1.0)
    raw = np.where(dm > 0.0, (1.0 - d / safe) ** 2, 0.0)
    raw = np.where(d >= dm, 0.0, raw)
    total = raw.sum(axis=-1, keepdims=True)
    uniform = total <= 0.0
    return np.where(uniform, 1.0 / k, raw / np.where(uniform, 1.0, total))


def build_graph(
    mesh: Mesh,
    nodes: Sequence[int],
    n_neighbor: int = DEFAULT_N_NEIGHBOR,
    metric: str = "geodesic",
) -> DeformationGraph:
    node_ids = np.asarray(nodes, dtype=np.int64).reshape(-1)
    if node_ids.size == 0 or node_ids.min() < 0 or node_ids.max() >= mesh.n_vertices:
        raise DataError("control nodes must be vertex indices of the mesh")
    if len(np.unique(node_ids)) != len(node_ids):
        raise DataError("control nodes must be distinct")
    if n_neighbor < 1:
        raise DataError(f"n_neighbor must be >= 1, got {n_neighbor}")
    if n_neighbor + 1 > len(node_ids):
        raise DataError(f"{len(node_ids)} nodes are too few for n_neighbor={n_neighbor} (need n_neighbor + 1)")

    if metric == "geodesic":
        dist = np.atleast_2d(csgraph.dijkstra(mesh.adjacency, directed=False, indices=node_ids)).T
    elif metric == "euclidean":
        dist = cdist(mesh.vertices, mesh.vertices[node_ids])
    else:
        raise DataError(f"unknown metric {metric!r}; expected one of {METRICS}")

    order = np.argsort(dist, axis=1, kind="stable")[:, : n_neighbor + 1]
    sorted_dist = np.take_along_axis(dist, order, axis=1)
    cut_off = np.flatnonzero(~np.isfinite(sorted_dist[:, n_neighbor]))
    if cut_off.size:
        v = int(cut_off[0])
        raise DataError(f"vertex {v} reaches fewer than {n_neighbor + 1} control nodes", vertex=v)
    weights = influence_weights(sorted_dist[:, :n_neighbor], sorted_dist[:, n_neighbor])
    return DeformationGraph(
        node_vertex_ids=node_ids,
        neighbors=order[:, :n_neighbor],
        weights=weights,
        metric=metric,
        distances=sorted_dist[:, :n_neighbor],
    )


def graph_to_doc(graph: DeformationGraph) -> GraphDoc:
    return GraphDoc(
        nodes=[int(n) for n in graph.node_vertex_ids],
        metric=graph.metric,
        vertices=[
            GraphVertexDoc(neighbors=[int(n) for n in nbr], weights=[float(w) for w in wts])
            for nbr, wts in zip(graph.neighbors, graph.weights)
        ],
    )


def graph_from_doc(doc: GraphDoc) -> DeformationGraph:
    return DeformationGraph(
        node_vertex_ids=np.asarray(doc.nodes, dtype=np.int64),
        neighbors=np.asarray([v.neighbors for v in doc.vertices], dtype=np.int64),
        weights=np.asarray([v.weights for v in doc.vertices], dtype=np.float64),
        metric=doc.metric,
    )


def save_graph(path: Union[str, Path], graph: DeformationGraph) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(graph_to_doc(graph).model_dump(), f, indent=2)


def load_graph(path: Union[str, Path], mesh: Optional[Mesh] = None) -> DeformationGraph:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataError(f"{path}: invalid JSON: {e}") from None
    try:
        doc = GraphDoc.model_validate(data)
    except ValidationError as e:
        raise DataError(f"{path}: invalid graph document: {e}") from None
    graph = graph_from_doc(doc)
    if mesh is not None:
        graph.check_mesh(mesh)
    return graph
