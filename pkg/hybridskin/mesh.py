import logging
from functools import cached_property
from pathlib import Path
from typing import Iterable, List, Optional, Set, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import DataError, ObjParseError


logger = logging.getLogger("hybridskin.mesh")

PathLike = Union[str, Path]

# a face whose smallest corner has sin(angle) below this is treated as zero-area
_DEGENERATE_SIN = 1e-14
_SOURCE_BLOCK = 256


class Mesh:
    """Triangle mesh with derived adjacency.

    Arrays are read-only after construction; derived structures are computed lazily
    and cached, so a Mesh can be shared between threads once built.
    """

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=np.float64)
        f = np.array(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise DataError("empty mesh: expected at least one 3D vertex")
        if f.size == 0:
            raise DataError("empty mesh: expected at least one face")
        if f.ndim != 2 or f.shape[1] != 3:
            raise DataError("faces must be vertex-index triples")
        bad = np.flatnonzero((f < 0).any(axis=1) | (f >= len(v)).any(axis=1))
        if bad.size:
            raise DataError(f"face {int(bad[0])} references a vertex outside [0, {len(v)})", face=int(bad[0]))
        repeated = np.flatnonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0]))
        if repeated.size:
            raise DataError(f"face {int(repeated[0])} repeats a vertex index", face=int(repeated[0]))

        half_edges = f[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
        keys = np.sort(half_edges, axis=1)
        edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.reshape(-1)
        if (counts > 2).any():
            e = edges[np.argmax(counts > 2)]
            raise DataError(f"non-manifold edge ({int(e[0])}, {int(e[1])}) is shared by more than two faces")
        lengths = np.linalg.norm(v[edges[:, 1]] - v[edges[:, 0]], axis=1)
        if (lengths <= 0.0).any():
            e = edges[np.argmax(lengths <= 0.0)]
            raise DataError(f"edge ({int(e[0])}, {int(e[1])}) has zero rest length")

        face_of_half_edge = np.repeat(np.arange(len(f)), 3)
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        interior = np.flatnonzero(counts == 2)
        first = face_of_half_edge[order[starts[interior]]]
        second = face_of_half_edge[order[starts[interior] + 1]]

        self._vertices = _frozen(v)
        self._faces = _frozen(f)
        self._edges = _frozen(edges.astype(np.int64))
        self._edge_lengths = _frozen(lengths)
        self._face_adjacency = _frozen(np.column_stack([first, second]).astype(np.int64))
        self._face_adjacency_edges = _frozen(edges[interior].astype(np.int64))

    @property
    def vertices(self) -> np.ndarray:
        return self._vertices

    @property
    def faces(self) -> np.ndarray:
        return self._faces

    @property
    def edges(self) -> np.ndarray:
        """Undirected edges (i < j), lexicographically sorted."""
        return self._edges

    @property
    def edge_lengths(self) -> np.ndarray:
        return self._edge_lengths

    @property
    def face_adjacency(self) -> np.ndarray:
        """Pairs of faces sharing an interior edge, aligned with face_adjacency_edges."""
        return self._face_adjacency

    @property
    def face_adjacency_edges(self) -> np.ndarray:
        return self._face_adjacency_edges

    @property
    def n_vertices(self) -> int:
        return len(self._vertices)

    @property
    def n_faces(self) -> int:
        return len(self._faces)

    @property
    def bbox_diagonal(self) -> float:
        return float(np.linalg.norm(self._vertices.max(axis=0) - self._vertices.min(axis=0)))

    @cached_property
    def face_areas(self) -> np.ndarray:
        p = self._vertices[self._faces]
        return _frozen(0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1))

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric edge graph weighted by rest edge length."""
        n = self.n_vertices
        i, j = self._edges[:, 0], self._edges[:, 1]
        data = np.concatenate([self._edge_lengths, self._edge_lengths])
        return sparse.csr_matrix((data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))

    @cached_property
    def directed_edges(self) -> np.ndarray:
        """Each undirected edge in both orientations: rows (v, v_n) for v_n in one_ring(v)."""
        return _frozen(np.concatenate([self._edges, self._edges[:, ::-1]]))

    @cached_property
    def cotangent_matrix(self) -> sparse.csr_matrix:
        return _cotangent_matrix(self._vertices, self._faces)

    @cached_property
    def edge_cotangent_weights(self) -> np.ndarray:
        """Cotangent weight of each row of `edges`."""
        w = self.cotangent_matrix[self._edges[:, 0], self._edges[:, 1]]
        return _frozen(np.asarray(w, dtype=np.float64).reshape(-1))

    def check_field(self, field: np.ndarray, name: str, trailing: Tuple[int, ...] = (3,)) -> np.ndarray:
        arr = np.asarray(field, dtype=np.float64)
        if arr.shape != (self.n_vertices,) + trailing:
            raise DataError(f"{name} has shape {arr.shape}, expected {(self.n_vertices,) + trailing}")
        return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _cotangent_matrix(vertices: np.ndarray, faces: np.ndarray) -> sparse.csr_matrix:
    p = vertices[faces]
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    for k in range(3):
        # corner k is opposite the edge (k+1, k+2)
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cross = np.linalg.norm(np.cross(a, b), axis=1)
        scale = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        degenerate = np.flatnonzero(cross <= _DEGENERATE_SIN * scale)
        if degenerate.size:
            face = int(degenerate[0])
            raise DataError(f"face {face} has zero area", face=face)
        half_cot = 0.5 * np.einsum("ij,ij->i", a, b) / cross
        i, j = faces[:, (k + 1) % 3], faces[:, (k + 2) % 3]
        rows += [i, j]
        cols += [j, i]
        vals += [half_cot, half_cot]
    n = len(vertices)
    coo = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return coo.tocsr()


def load_obj(path: PathLike) -> Mesh:
    vertices: List[List[float]] = []
    faces: List[Tuple[int, int, int]] = []
    face_lines: List[int] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tag, *rest = line.split()
            if tag == "v":
                if len(rest) < 3:
                    raise ObjParseError("vertex record needs 3 coordinates", lineno)
                try:
                    vertices.append([float(x) for x in rest[:3]])
                except ValueError:
                    raise ObjParseError(f"bad vertex coordinate in {line!r}", lineno) from None
            elif tag == "f":
                if len(rest) < 3:
                    raise ObjParseError("face record needs at least 3 vertices", lineno)
                polygon = [_obj_index(token, len(vertices), lineno) for token in rest]
                for i in range(1, len(polygon) - 1):
                    faces.append((polygon[0], polygon[i], polygon[i + 1]))
                    face_lines.append(lineno)
    if not vertices or not faces:
        raise DataError(f"empty mesh in {path}: {len(vertices)} vertices, {len(faces)} faces")
    for face, lineno in zip(faces, face_lines):
        for k in face:
            if not 0 <= k < len(vertices):
                raise DataError(f"line {lineno}: face index {k + 1} out of range ({len(vertices)} vertices)")
    mesh = Mesh(vertices, faces)
    logger.debug("loaded %s: %d vertices, %d faces", path, mesh.n_vertices, mesh.n_faces)
    return mesh


def _obj_index(token: str, n_seen: int, lineno: int) -> int:
    head = token.split("/", 1)[0]
    try:
        k = int(head)
    except ValueError:
        raise ObjParseError(f"bad face index {token!r}", lineno) from None
    if k == 0:
        raise ObjParseError("face index 0 is not valid in OBJ", lineno)
    # negative indices count back from the vertices seen so far
    return k - 1 if k > 0 else n_seen + k


def write_obj(path: PathLike, mesh: Mesh, vertices: Optional[np.ndarray] = None) -> None:
    pos = mesh.vertices if vertices is None else mesh.check_field(vertices, "vertices")
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in pos]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def one_ring(mesh: Mesh, v: int) -> Set[int]:
    if not 0 <= v < mesh.n_vertices:
        raise DataError(f"vertex {v} out of range [0, {mesh.n_vertices})", vertex=v)
    adj = mesh.adjacency
    return {int(k) for k in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]}


def cotangent_weights(mesh: Mesh) -> sparse.csr_matrix:
    """ω(v, v_n) = ½ Σ cot of the angles opposite edge (v, v_n), on rest geometry.

    Returned as a symmetric sparse matrix; obtuse corners give negative weights,
    which are kept.
    """
    return mesh.cotangent_matrix


def multi_source_geodesic(mesh: Mesh, sources: Iterable[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Edge-graph distance to the nearest source and that source's index.

    Unreachable vertices get distance inf and nearest source -1. Ties go to the
    smallest source index.
    """
    src = np.unique(np.fromiter((int(s) for s in sources), dtype=np.int64))
    if src.size == 0:
        raise DataError("multi_source_geodesic needs at least one source")
    if src[0] < 0 or src[-1] >= mesh.n_vertices:
        raise DataError(f"source vertex out of range [0, {mesh.n_vertices})")
    n = mesh.n_vertices
    dist = np.full(n, np.inf)
    nearest = np.full(n, -1, dtype=np.int64)
    cols = np.arange(n)
    for start in range(0, len(src), _SOURCE_BLOCK):
        block = src[start:start + _SOURCE_BLOCK]
        d = np.atleast_2d(csgraph.dijkstra(mesh.adjacency, directed=False, indices=block))
        pick = np.argmin(d, axis=0)
        best = d[pick, cols]
        better = best < dist
        dist[better] = best[better]
        nearest[better] = block[pick[better]]
    return dist, nearest


def face_normals(mesh: Mesh, positions: np.ndarray) -> np.ndarray:
    pos = mesh.check_field(positions, "positions")
    p = pos[mesh.faces]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    cross = np.cross(e1, e2)
    norms = np.linalg.norm(cross, axis=1)
    degenerate = np.flatnonzero(norms <= _DEGENERATE_SIN * np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
    if degenerate.size:
        face = int(degenerate[0])
        raise DataError(f"face {face} is degenerate at the evaluated positions", face=face)
    return cross / norms[:, None]
