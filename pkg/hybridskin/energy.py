"""ARAP and normal-consistency energies with exact position gradients."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import Mesh, face_normals


@dataclass(frozen=True)
class EnergyReport:
    value: float
    gradient: np.ndarray
    # dE/dR_v, only produced by arap_energy
    rotation_gradient: Optional[np.ndarray] = None


def arap_energy(mesh: Mesh, deformed: np.ndarray, vertex_rotations: np.ndarray) -> EnergyReport:
    """Σ_v Σ_{n ∈ ring(v)} ω_vn ‖(x_v − x_n) − R_v (v − v_n)‖².

    Every undirected edge is visited from both endpoints, each time with the
    rotation of the visiting vertex.
    """
    x = mesh.check_field(deformed, "deformed positions")
    rot = mesh.check_field(vertex_rotations, "vertex rotations", trailing=(3, 3))
    i, j = mesh.directed_edges[:, 0], mesh.directed_edges[:, 1]
    omega = np.concatenate([mesh.edge_cotangent_weights, mesh.edge_cotangent_weights])

    rest_edge = mesh.vertices[i] - mesh.vertices[j]
    residual = (x[i] - x[j]) - np.einsum("nab,nb->na", rot[i], rest_edge)
    value = float(np.sum(omega * np.sum(residual * residual, axis=1)))

    scaled = 2.0 * omega[:, None] * residual
    grad = np.zeros_like(x)
    np.add.at(grad, i, scaled)
    np.add.at(grad, j, -scaled)
    rot_grad = np.zeros_like(rot)
    np.add.at(rot_grad, i, -scaled[:, :, None] * rest_edge[:, None, :])
    return EnergyReport(value=value, gradient=grad, rotation_gradient=rot_grad)


def normal_consistency(mesh: Mesh, deformed: np.ndarray) -> EnergyReport:
    """Σ over interior edges of 1 − n(f1)·n(f2)."""
    x = mesh.check_field(deformed, "deformed positions")
    normals = face_normals(mesh, x)
    f1, f2 = mesh.face_adjacency[:, 0], mesh.face_adjacency[:, 1]
    value = float(np.sum(1.0 - np.einsum("ij,ij->i", normals[f1], normals[f2])))

    grad_n = np.zeros_like(normals)
    np.add.at(grad_n, f1, -normals[f2])
    np.add.at(grad_n, f2, -normals[f1])

    p = x[mesh.faces]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    length = np.linalg.norm(np.cross(a, b), axis=1, keepdims=True)
    # through n = c / |c| and c = a × b
    grad_c = (grad_n - normals * np.sum(normals * grad_n, axis=1, keepdims=True)) / length
    grad_a = np.cross(b, grad_c)
    grad_b = np.cross(grad_c, a)

    grad = np.zeros_like(x)
    np.add.at(grad, mesh.faces[:, 1], grad_a)
    np.add.at(grad, mesh.faces[:, 2], grad_b)
    np.add.at(grad, mesh.faces[:, 0], -(grad_a + grad_b))
    return EnergyReport(value=value, gradient=grad)
