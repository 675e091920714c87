"""Linear, dual-quaternion and adaptive hybrid skinning.

Every node carries (R, S, t, η). LBS moves a vertex with the blended affine maps
R·S̄ + t where S̄ = (1-η)S + ηI, DQS blends the rigid parts (R, t) as unit dual
quaternions, and AHS interpolates the two with the blended η. The per-vertex
rotation R_v and shear S_v are produced in every mode since ARAP and the Gaussian
updates consume them.

The scalar operations (lbs_vertex, dqs_vertex, ahs_vertex, dq_blend, ...) are the
reference definitions; deform_mesh and the fitter run the vectorized kernels below.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.linalg import polar

from .errors import DataError, NumericalError
from .graph import DeformationGraph
from .mesh import Mesh
from .models import FrameDoc, NodeDoc, TrajectoryDoc
from .rotations import (
    matrix_to_quat,
    matrix_to_rotvec,
    quat_conjugate,
    quat_log,
    quat_multiply,
    quat_to_matrix,
    rotation_angle_between,
    rotvec_to_matrix,
)


logger = logging.getLogger("hybridskin.skinning")

MODES = ("lbs", "dqs", "ahs")
SHEAR6_IDENTITY = (1.0, 0.0, 0.0, 1.0, 0.0, 1.0)
# upper-triangle order of shear6: xx, xy, xz, yy, yz, zz
SHEAR6_INDEX = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

ANTIPODAL_NORM = 1e-12
MAX_BLEND_ANGLE = np.pi - 1e-6


def shear_from6(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    s = np.zeros(h.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(SHEAR6_INDEX):
        s[..., i, j] = h[..., k]
        s[..., j, i] = h[..., k]
    return s


def shear_to6(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return np.stack([s[..., i, j] for i, j in SHEAR6_INDEX], axis=-1)


@dataclass(frozen=True)
class NodeTransform:
    rotation: np.ndarray
    shear: np.ndarray
    translation: np.ndarray
    rigid_strength: float

    @classmethod
    def identity(cls) -> "NodeTransform":
        return cls(np.eye(3), np.eye(3), np.zeros(3), 0.0)

    @property
    def effective_shear(self) -> np.ndarray:
        return effective_shear(self.shear, self.rigid_strength)


@dataclass(frozen=True)
class NodeTransforms:
    """Per-node transforms of one frame, stored as stacked arrays."""

    rotations: np.ndarray
    shears: np.ndarray
    translations: np.ndarray
    rigid_strength: np.ndarray

    def __post_init__(self):
        n = len(self.rotations)
        if (
            self.rotations.shape != (n, 3, 3)
            or self.shears.shape != (n, 3, 3)
            or self.translations.shape != (n, 3)
            or self.rigid_strength.shape != (n,)
        ):
            raise DataError("node transform arrays disagree on node count or shape")

    def __len__(self) -> int:
        return len(self.rotations)

    def __getitem__(self, p: int) -> NodeTransform:
        return NodeTransform(self.rotations[p], self.shears[p], self.translations[p], float(self.rigid_strength[p]))

    @classmethod
    def identity(cls, n: int, eta: float = 0.0) -> "NodeTransforms":
        return cls(
            rotations=np.tile(np.eye(3), (n, 1, 1)),
            shears=np.tile(np.eye(3), (n, 1, 1)),
            translations=np.zeros((n, 3)),
            rigid_strength=np.full(n, float(eta)),
        )

    @classmethod
    def from_list(cls, items: Sequence[NodeTransform]) -> "NodeTransforms":
        return cls(
            rotations=np.array([np.asarray(t.rotation, dtype=np.float64) for t in items]).reshape(-1, 3, 3),
            shears=np.array([np.asarray(t.shear, dtype=np.float64) for t in items]).reshape(-1, 3, 3),
            translations=np.array([np.asarray(t.translation, dtype=np.float64) for t in items]).reshape(-1, 3),
            rigid_strength=np.array([float(t.rigid_strength) for t in items], dtype=np.float64),
        )

    @classmethod
    def from_frame_doc(cls, doc: FrameDoc) -> "NodeTransforms":
        return cls(
            rotations=rotvec_to_matrix(np.array([n.rotvec for n in doc.nodes], dtype=np.float64)),
            shears=shear_from6(np.array([n.shear6 for n in doc.nodes], dtype=np.float64)),
            translations=np.array([n.translation for n in doc.nodes], dtype=np.float64).reshape(-1, 3),
            rigid_strength=np.array([n.eta for n in doc.nodes], dtype=np.float64),
        )

    def to_frame_doc(self, time: float) -> FrameDoc:
        rotvecs = matrix_to_rotvec(self.rotations)
        shear6 = shear_to6(self.shears)
        return FrameDoc(
            time=float(time),
            nodes=[
                NodeDoc(
                    rotvec=[float(x) for x in r],
                    shear6=[float(x) for x in h],
                    translation=[float(x) for x in t],
                    eta=float(e),
                )
                for r, h, t, e in zip(rotvecs, shear6, self.translations, self.rigid_strength)
            ],
        )

    def validate(self) -> None:
        rtr = np.einsum("nji,njk->nik", self.rotations, self.rotations)
        bad = np.flatnonzero(
            (np.abs(rtr - np.eye(3)).max(axis=(1, 2)) > 1e-9) | (np.linalg.det(self.rotations) <= 0.0)
        )
        if bad.size:
            raise DataError(f"node {int(bad[0])}: rotation is not orthonormal with det +1")
        bad = np.flatnonzero(np.abs(self.shears - np.swapaxes(self.shears, 1, 2)).max(axis=(1, 2)) > 1e-12)
        if bad.size:
            raise DataError(f"node {int(bad[0])}: shear is not symmetric")
        bad = np.flatnonzero(~((self.rigid_strength >= 0.0) & (self.rigid_strength <= 1.0)))
        if bad.size:
            raise DataError(f"node {int(bad[0])}: rigid strength {self.rigid_strength[bad[0]]} outside [0, 1]")

    def effective_shears(self) -> np.ndarray:
        eta = self.rigid_strength[:, None, None]
        return (1.0 - eta) * self.shears + eta * np.eye(3)

    def quaternions(self) -> np.ndarray:
        return matrix_to_quat(self.rotations)

    def compose_left(self, rotation: np.ndarray, translation: np.ndarray) -> "NodeTransforms":
        """Apply a global rigid motion x -> Q x + c after every node transform."""
        q = np.asarray(rotation, dtype=np.float64)
        c = np.asarray(translation, dtype=np.float64)
        return NodeTransforms(
            rotations=q @ self.rotations,
            shears=self.shears,
            translations=self.translations @ q.T + c,
            rigid_strength=self.rigid_strength,
        )


@dataclass(frozen=True)
class DualQuaternion:
    real: np.ndarray
    dual: np.ndarray

    def translation(self) -> np.ndarray:
        return 2.0 * quat_multiply(self.dual, quat_conjugate(self.real))[1:]

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.real)


@dataclass(frozen=True)
class VertexDeformation:
    position: np.ndarray
    rotation: np.ndarray
    shear: np.ndarray
    rigid_strength: float


@dataclass(frozen=True)
class MeshDeformation:
    positions: np.ndarray
    rotations: np.ndarray
    shears: np.ndarray
    rigid_strength: np.ndarray


def polar_decompose(f: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (3, 3):
        raise DataError(f"polar_decompose expects a 3x3 matrix, got shape {f.shape}")
    det = np.linalg.det(f)
    if not det > 0.0:
        raise NumericalError(f"polar decomposition needs det F > 0, got {det:.3g}")
    r, s = polar(f, side="right")
    return r, 0.5 * (s + s.T)


def effective_shear(shear: np.ndarray, eta: float) -> np.ndarray:
    if not 0.0 <= eta <= 1.0:
        raise DataError(f"rigid strength {eta} outside [0, 1]")
    return (1.0 - eta) * np.asarray(shear, dtype=np.float64) + eta * np.eye(3)


def deform_node(p: np.ndarray, transform: NodeTransform) -> np.ndarray:
    return transform.rotation @ (transform.effective_shear @ np.asarray(p, dtype=np.float64)) + transform.translation


def dq_from_rigid(rotation: np.ndarray, translation: np.ndarray) -> DualQuaternion:
    q = matrix_to_quat(rotation)
    t = np.concatenate([[0.0], np.asarray(translation, dtype=np.float64)])
    return DualQuaternion(real=q, dual=0.5 * quat_multiply(t, q))


def dq_apply(dq: DualQuaternion, v: np.ndarray) -> np.ndarray:
    p = np.concatenate([[0.0], np.asarray(v, dtype=np.float64)])
    rotated = quat_multiply(quat_multiply(dq.real, p), quat_conjugate(dq.real))[1:]
    return rotated + dq.translation()


def dq_blend(weights: Sequence[float], dqs: Sequence[DualQuaternion], pivot: int) -> DualQuaternion:
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != len(dqs) or not 0 <= pivot < len(dqs):
        raise DataError("dq_blend needs one weight per dual quaternion and a pivot inside the list")
    real = np.array([d.real for d in dqs])
    dual = np.array([d.dual for d in dqs])
    signs = np.where(real @ real[pivot] < 0.0, -1.0, 1.0)
    b0 = (w * signs) @ real
    bd = (w * signs) @ dual
    norm = np.linalg.norm(b0)
    if norm < ANTIPODAL_NORM:
        raise NumericalError(f"antipodal dual-quaternion blend: |sum| = {norm:.3g}")
    r = b0 / norm
    d = bd / norm
    return DualQuaternion(real=r, dual=d - (r @ d) * r)


def _pivot(neighbors: Sequence[int], weights: Sequence[float]) -> int:
    # highest weight, ties to the lowest node id
    return min(range(len(weights)), key=lambda k: (-float(weights[k]), int(neighbors[k])))


def lbs_vertex(v, neighbors, weights, transforms: NodeTransforms) -> np.ndarray:
    x = np.zeros(3)
    for p, w in zip(neighbors, weights):
        x += w * deform_node(v, transforms[int(p)])
    return x


def dqs_vertex(v, neighbors, weights, transforms: NodeTransforms) -> np.ndarray:
    dqs = [dq_from_rigid(transforms.rotations[p], transforms.translations[p]) for p in neighbors]
    return dq_apply(dq_blend(weights, dqs, _pivot(neighbors, weights)), v)


def rotation_log_blend(
    weights: Sequence[float],
    rotations: np.ndarray,
    pivot: Optional[int] = None,
    strict: bool = True,
) -> np.ndarray:
    """exp(Σ w log R) through hemisphere-aligned quaternion logs.

    With strict=True, any two positively weighted inputs at least π - 1e-6 apart
    raise NumericalError. The skinning pipeline passes strict=False: the aligned
    representative is still deterministic there, and positions never depend on it.
    """
    w = np.asarray(weights, dtype=np.float64)
    q = matrix_to_quat(np.asarray(rotations, dtype=np.float64).reshape(-1, 3, 3))
    if len(w) != len(q):
        raise DataError("rotation_log_blend needs one weight per rotation")
    if pivot is None:
        pivot = int(np.argmax(w))
    if strict:
        active = q[w > 0.0]
        angles = rotation_angle_between(active[:, None, :], active[None, :, :])
        if (angles >= MAX_BLEND_ANGLE).any():
            raise NumericalError("rotation blend inputs are near-antipodal; the log map is ill-defined")
    signs = np.where(q @ q[pivot] < 0.0, -1.0, 1.0)
    return rotvec_to_matrix(w @ quat_log(signs[:, None] * q))


def ahs_vertex(v, neighbors, weights, transforms: NodeTransforms) -> VertexDeformation:
    nbr = np.asarray(neighbors, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    eta = float(w @ transforms.rigid_strength[nbr])
    position = (1.0 - eta) * lbs_vertex(v, nbr, w, transforms) + eta * dqs_vertex(v, nbr, w, transforms)
    rotation = rotation_log_blend(w, transforms.rotations[nbr], pivot=_pivot(nbr, w), strict=False)
    shear = sum(wk * transforms[int(p)].effective_shear for p, wk in zip(nbr, w))
    return VertexDeformation(position=position, rotation=rotation, shear=shear, rigid_strength=eta)


# vectorized kernels, shared with the fitter


def pivot_columns(neighbors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    top = weights == weights.max(axis=1, keepdims=True)
    key = np.where(top, neighbors, np.iinfo(np.int64).max)
    return np.argmin(key, axis=1)


def alignment_signs(q_nb: np.ndarray, pivot: np.ndarray) -> np.ndarray:
    """±1 per (vertex, neighbor) putting every quaternion in the pivot's hemisphere.

    The pivot itself is flipped to w >= 0 so the aligned logs use a canonical branch.
    """
    qp = q_nb[np.arange(len(q_nb)), pivot]
    canon = np.where(qp[:, 0] >= 0.0, 1.0, -1.0)
    same = np.where(np.einsum("vkj,vj->vk", q_nb, qp) >= 0.0, 1.0, -1.0)
    return canon[:, None] * same


def dq_dual_parts(quats: np.ndarray, translations: np.ndarray) -> np.ndarray:
    t = np.concatenate([np.zeros(translations.shape[:-1] + (1,)), translations], axis=-1)
    return 0.5 * quat_multiply(t, quats)


def dq_blend_points(rest: np.ndarray, b0: np.ndarray, bd: np.ndarray) -> np.ndarray:
    """Apply the normalized blend (b0, bd)/|b0| to each rest point."""
    n2 = np.sum(b0 * b0, axis=1)
    bad = np.flatnonzero(n2 < ANTIPODAL_NORM**2)
    if bad.size:
        raise NumericalError(f"antipodal dual-quaternion blend at vertex {int(bad[0])}")
    w, u = b0[:, :1], b0[:, 1:]
    dw, du = bd[:, :1], bd[:, 1:]
    rotated = (w * w - np.sum(u * u, axis=1, keepdims=True)) * rest
    rotated += 2.0 * np.sum(u * rest, axis=1, keepdims=True) * u + 2.0 * w * np.cross(u, rest)
    moved = 2.0 * (w * du - dw * u + np.cross(u, du))
    return (rotated + moved) / n2[:, None]


def lbs_positions(rest, neighbors, weights, affine: np.ndarray, translations: np.ndarray) -> np.ndarray:
    return np.einsum("vk,vkij,vj->vi", weights, affine[neighbors], rest) + np.einsum(
        "vk,vki->vi", weights, translations[neighbors]
    )


def dq_blend_sums(
    neighbors, weights, quats: np.ndarray, translations: np.ndarray, signs: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Unnormalized per-vertex blends (b0, bd) of the hemisphere-aligned node dual quaternions."""
    q_nb = quats[neighbors]
    if signs is None:
        signs = alignment_signs(q_nb, pivot_columns(neighbors, weights))
    ws = weights * signs
    b0 = np.einsum("vk,vkj->vj", ws, q_nb)
    bd = np.einsum("vk,vkj->vj", ws, dq_dual_parts(quats, translations)[neighbors])
    return b0, bd


def dqs_positions(rest, neighbors, weights, quats: np.ndarray, translations: np.ndarray) -> np.ndarray:
    return dq_blend_points(rest, *dq_blend_sums(neighbors, weights, quats, translations))


def _skin_chunk(rest, neighbors, weights, transforms: NodeTransforms, quats, shears_eff, mode) -> MeshDeformation:
    eta = np.einsum("vk,vk->v", weights, transforms.rigid_strength[neighbors])
    if mode == "dqs":
        positions = dqs_positions(rest, neighbors, weights, quats, transforms.translations)
    else:
        affine = transforms.rotations @ shears_eff
        positions = lbs_positions(rest, neighbors, weights, affine, transforms.translations)
        if mode == "ahs":
            dual = dqs_positions(rest, neighbors, weights, quats, transforms.translations)
            positions = (1.0 - eta)[:, None] * positions + eta[:, None] * dual
    q_nb = quats[neighbors]
    signs = alignment_signs(q_nb, pivot_columns(neighbors, weights))
    rotvecs = np.einsum("vk,vkj->vj", weights, quat_log(signs[..., None] * q_nb))
    return MeshDeformation(
        positions=positions,
        rotations=rotvec_to_matrix(rotvecs),
        shears=np.einsum("vk,vkij->vij", weights, shears_eff[neighbors]),
        rigid_strength=eta,
    )


def deform_mesh(
    mesh: Mesh,
    graph: DeformationGraph,
    transforms: NodeTransforms,
    mode: str = "ahs",
    workers: int = 1,
) -> MeshDeformation:
    if mode not in MODES:
        raise DataError(f"unknown skinning mode {mode!r}; expected one of {MODES}")
    graph.check_mesh(mesh)
    if len(transforms) != graph.n_nodes:
        raise DataError(f"{len(transforms)} node transforms for a graph with {graph.n_nodes} nodes")
    transforms.validate()
    quats = transforms.quaternions()
    shears_eff = transforms.effective_shears()

    def run(idx: np.ndarray) -> MeshDeformation:
        return _skin_chunk(
            mesh.vertices[idx], graph.neighbors[idx], graph.weights[idx], transforms, quats, shears_eff, mode
        )

    if workers <= 1:
        return run(np.arange(mesh.n_vertices))
    chunks = [c for c in np.array_split(np.arange(mesh.n_vertices), workers) if c.size]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts: List[MeshDeformation] = list(pool.map(run, chunks))
    return MeshDeformation(
        positions=np.concatenate([p.positions for p in parts]),
        rotations=np.concatenate([p.rotations for p in parts]),
        shears=np.concatenate([p.shears for p in parts]),
        rigid_strength=np.concatenate([p.rigid_strength for p in parts]),
    )


def trajectory_doc(frames: Sequence[Tuple[float, NodeTransforms]]) -> TrajectoryDoc:
    return TrajectoryDoc(frames=[t.to_frame_doc(time) for time, t in frames])


def save_trajectory(path: Union[str, Path], doc: TrajectoryDoc) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc.model_dump(), f, indent=2)


def load_trajectory(path: Union[str, Path]) -> List[Tuple[float, NodeTransforms]]:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataError(f"{path}: invalid JSON: {e}") from None
    try:
        doc = TrajectoryDoc.model_validate(data)
    except ValidationError as e:
        raise DataError(f"{path}: invalid trajectory document: {e}") from None
    frames = [(frame.time, NodeTransforms.from_frame_doc(frame)) for frame in doc.frames]
    logger.debug("loaded %s: %d frames, %d nodes", path, len(frames), len(frames[0][1]))
    return frames
