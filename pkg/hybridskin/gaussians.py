"""Flat Gaussians bound to mesh faces by barycentric coordinates."""
import base64
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError

from .errors import DataError, NumericalError
from .mesh import Mesh, face_normals
from .models import GAUSSIANS_PER_FACE, GaussianDoc, GaussianSetDoc
from .rotations import matrix_to_quat, quat_from_rotvec, quat_log, quat_multiply, rotation_angle_between
from .skinning import MAX_BLEND_ANGLE, MeshDeformation


logger = logging.getLogger("hybridskin.gaussians")

DEFAULT_PER_FACE = 6
DEFAULT_PAYLOAD = bytes([255, 255, 255, 255])
FLATNESS = 1e-3
MIN_SCALING = 1e-8

_TWO_THIRDS = ((2 / 3, 1 / 6), (1 / 6, 2 / 3), (1 / 6, 1 / 6))
_FIVE_TWELFTHS = ((1 / 6, 5 / 12), (5 / 12, 1 / 6), (5 / 12, 5 / 12))
_PATTERNS = {
    1: ((1 / 3, 1 / 3),),
    3: _TWO_THIRDS,
    4: ((1 / 3, 1 / 3),) + _TWO_THIRDS,
    6: _TWO_THIRDS + _FIVE_TWELFTHS,
}


@dataclass(frozen=True)
class SurfaceGaussian:
    face: int
    barycentric: np.ndarray
    rotation: np.ndarray
    scaling: np.ndarray
    payload: bytes
    center: np.ndarray


@dataclass(frozen=True)
class SurfaceGaussianSet:
    mesh: Mesh
    per_face: int
    faces: np.ndarray
    barycentric: np.ndarray
    rotations: np.ndarray
    scalings: np.ndarray
    centers: np.ndarray
    payloads: Tuple[bytes, ...]

    def __len__(self) -> int:
        return len(self.faces)

    def __getitem__(self, g: int) -> SurfaceGaussian:
        return SurfaceGaussian(
            face=int(self.faces[g]),
            barycentric=self.barycentric[g],
            rotation=self.rotations[g],
            scaling=self.scalings[g],
            payload=self.payloads[g],
            center=self.centers[g],
        )

    @property
    def corners(self) -> np.ndarray:
        """Vertex ids (a, b, c) of each Gaussian's face."""
        return self.mesh.faces[self.faces]


def barycentric_pattern(per_face: int) -> np.ndarray:
    if per_face not in _PATTERNS:
        raise DataError(f"per_face must be one of {GAUSSIANS_PER_FACE}, got {per_face}")
    ab = np.array(_PATTERNS[per_face], dtype=np.float64)
    return np.column_stack([ab, 1.0 - (ab[:, 0] + ab[:, 1])])


def bind_gaussians(mesh: Mesh, per_face: int = DEFAULT_PER_FACE, payload: bytes = DEFAULT_PAYLOAD) -> SurfaceGaussianSet:
    pattern = barycentric_pattern(per_face)
    n_faces = mesh.n_faces
    p = mesh.vertices[mesh.faces]
    normals = face_normals(mesh, mesh.vertices)
    tangent = p[:, 1] - p[:, 0]
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    # columns (n, e1, n x e1): the local x axis, the thin one, follows the normal
    frames = np.stack([normals, tangent, np.cross(normals, tangent)], axis=-1)
    quats = matrix_to_quat(frames)

    a = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    half_circumradius = a * b * c / (4.0 * mesh.face_areas) / 2.0
    scalings = np.column_stack([FLATNESS * half_circumradius, half_circumradius, half_circumradius])

    faces = np.repeat(np.arange(n_faces), per_face)
    bary = np.tile(pattern, (n_faces, 1))
    centers = np.einsum("gi,gij->gj", bary, p[faces])
    return SurfaceGaussianSet(
        mesh=mesh,
        per_face=per_face,
        faces=faces,
        barycentric=bary,
        rotations=quats[faces],
        scalings=scalings[faces],
        centers=centers,
        payloads=(payload,) * len(faces),
    )


def deform_gaussian_centers(gaussians: SurfaceGaussianSet, deformed_positions: np.ndarray) -> np.ndarray:
    pos = gaussians.mesh.check_field(deformed_positions, "deformed positions")
    return np.einsum("gi,gij->gj", gaussians.barycentric, pos[gaussians.corners])


def deform_gaussian_rotations(gaussians: SurfaceGaussianSet, vertex_rotations: np.ndarray) -> np.ndarray:
    """q̃ = Δq · q with Δq the barycentric log-blend of the corner rotations."""
    rot = gaussians.mesh.check_field(vertex_rotations, "vertex rotations", trailing=(3, 3))
    q_corner = matrix_to_quat(rot)[gaussians.corners]
    bary = gaussians.barycentric

    angles = rotation_angle_between(q_corner[:, :, None, :], q_corner[:, None, :, :])
    active = (bary[:, :, None] > 0.0) & (bary[:, None, :] > 0.0)
    bad = np.flatnonzero(((angles >= MAX_BLEND_ANGLE) & active).any(axis=(1, 2)))
    if bad.size:
        raise NumericalError(f"gaussian {int(bad[0])}: corner rotations are near-antipodal")

    pivot = q_corner[np.arange(len(bary)), np.argmax(bary, axis=1)]
    signs = np.where(np.einsum("gkj,gj->gk", q_corner, pivot) < 0.0, -1.0, 1.0)
    rotvecs = np.einsum("gk,gkj->gj", bary, quat_log(signs[..., None] * q_corner))
    out = quat_multiply(quat_from_rotvec(rotvecs), gaussians.rotations)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def deform_gaussian_scalings(
    gaussians: SurfaceGaussianSet, vertex_shears: np.ndarray
) -> Tuple[np.ndarray, List[str]]:
    shears = gaussians.mesh.check_field(vertex_shears, "vertex shears", trailing=(3, 3))
    blended = np.einsum("gk,gkij->gij", gaussians.barycentric, shears[gaussians.corners])
    scalings = np.einsum("gij,gj->gi", blended, gaussians.scalings)
    clamped = scalings <= 0.0
    if not clamped.any():
        return scalings, []
    logger.warning(
        json.dumps({"event": "scaling_clamped", "gaussians": int(clamped.any(axis=1).sum()), "value": MIN_SCALING})
    )
    return np.where(clamped, MIN_SCALING, scalings), ["scaling_clamped"]


def deform_gaussians(
    gaussians: SurfaceGaussianSet, deformation: MeshDeformation
) -> Tuple[SurfaceGaussianSet, List[str]]:
    scalings, warnings = deform_gaussian_scalings(gaussians, deformation.shears)
    moved = replace(
        gaussians,
        centers=deform_gaussian_centers(gaussians, deformation.positions),
        rotations=deform_gaussian_rotations(gaussians, deformation.rotations),
        scalings=scalings,
    )
    return moved, warnings


def gaussians_to_doc(gaussians: SurfaceGaussianSet, with_centers: bool = False) -> GaussianSetDoc:
    return GaussianSetDoc(
        per_face=gaussians.per_face,
        gaussians=[
            GaussianDoc(
                face=int(f),
                bary=[float(x) for x in b],
                quat=[float(x) for x in q],
                scale=[float(x) for x in s],
                payload=base64.b64encode(pl).decode("ascii"),
                center=[float(x) for x in c] if with_centers else None,
            )
            for f, b, q, s, pl, c in zip(
                gaussians.faces,
                gaussians.barycentric,
                gaussians.rotations,
                gaussians.scalings,
                gaussians.payloads,
                gaussians.centers,
            )
        ],
    )


def gaussians_from_doc(doc: GaussianSetDoc, mesh: Mesh) -> SurfaceGaussianSet:
    if not doc.gaussians:
        raise DataError("gaussian set is empty")
    faces = np.array([g.face for g in doc.gaussians], dtype=np.int64)
    bary = np.array([g.bary for g in doc.gaussians], dtype=np.float64)
    quats = np.array([g.quat for g in doc.gaussians], dtype=np.float64)
    scales = np.array([g.scale for g in doc.gaussians], dtype=np.float64)
    _check_gaussians(mesh, faces, bary, quats, scales)
    try:
        payloads = tuple(base64.b64decode(g.payload, validate=True) for g in doc.gaussians)
    except ValueError as e:
        raise DataError(f"gaussian payload is not valid base64: {e}") from None
    if all(g.center is not None for g in doc.gaussians):
        centers = np.array([g.center for g in doc.gaussians], dtype=np.float64)
    else:
        centers = np.einsum("gi,gij->gj", bary, mesh.vertices[mesh.faces[faces]])
    return SurfaceGaussianSet(
        mesh=mesh,
        per_face=doc.per_face,
        faces=faces,
        barycentric=bary,
        rotations=quats,
        scalings=scales,
        centers=centers,
        payloads=payloads,
    )


def _check_gaussians(mesh: Mesh, faces, bary, quats, scales) -> None:
    checks: Sequence[Tuple[np.ndarray, str]] = (
        (faces >= mesh.n_faces, f"face index outside [0, {mesh.n_faces})"),
        ((bary < 0.0).any(axis=1) | (np.abs(bary.sum(axis=1) - 1.0) > 1e-12), "barycentric must be >= 0 and sum to 1"),
        (np.abs(np.linalg.norm(quats, axis=1) - 1.0) > 1e-9, "rotation is not a unit quaternion"),
        ((scales <= 0.0).any(axis=1), "scaling components must be positive"),
    )
    for bad, message in checks:
        idx = np.flatnonzero(bad)
        if idx.size:
            raise DataError(f"gaussian {int(idx[0])}: {message}")


def save_gaussians(path: Union[str, Path], gaussians: SurfaceGaussianSet, with_centers: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(gaussians_to_doc(gaussians, with_centers).model_dump(exclude_none=True), f, indent=2)


def load_gaussians(path: Union[str, Path], mesh: Mesh) -> SurfaceGaussianSet:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise DataError(f"{path}: invalid JSON: {e}") from None
    try:
        doc = GaussianSetDoc.model_validate(data)
    except ValidationError as e:
        raise DataError(f"{path}: invalid gaussian document: {e}") from None
    return gaussians_from_doc(doc, mesh)


def payloads_unchanged(before: SurfaceGaussianSet, after: SurfaceGaussianSet) -> bool:
    return len(before) == len(after) and all(a == b for a, b in zip(before.payloads, after.payloads))
