"""Per-frame recovery of node transforms from target vertex positions.

The objective is the mean squared vertex error plus weighted ARAP and normal
consistency. Its gradient w.r.t. the 13 parameters of every node is computed in
reverse mode by hand: energy gradients flow back through the selected skinning
mode, the per-vertex rotation blend, the dual-quaternion construction and the
rotation-vector / shear / logistic parametrizations.
"""
import json
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit

from .energy import arap_energy, normal_consistency
from .errors import DataError, NumericalError
from .graph import DeformationGraph
from .mesh import Mesh
from .models import FitConfig, FrameDoc, NodeDoc, TracePoint
from .rotations import (
    matrix_to_rotvec,
    quat_from_rotvec,
    quat_from_rotvec_jacobian,
    quat_log,
    quat_log_jacobian,
    rotvec_to_matrix,
    rotvec_to_matrix_vjp,
)
from .skinning import (
    SHEAR6_IDENTITY,
    SHEAR6_INDEX,
    NodeTransforms,
    alignment_signs,
    dq_blend_points,
    dq_blend_sums,
    lbs_positions,
    pivot_columns,
    shear_from6,
    shear_to6,
)


logger = logging.getLogger("hybridskin.fitting")

N_PARAMS = 13
ROTVEC, SHEAR6, TRANSLATION, ETA_LOGIT = slice(0, 3), slice(3, 9), slice(9, 12), 12

LBFGS_MEMORY = 10
ARMIJO = 1e-4
MAX_HALVINGS = 60
GRADIENT_FLOOR = 1e-12
# eta is clipped away from {0, 1} before taking the logit
ETA_EPS = 1e-12


@dataclass(frozen=True)
class FrameParams:
    """(N, 13) table: rotvec, shear6, translation, eta_logit per node."""

    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != N_PARAMS:
            raise DataError(f"frame parameters must have shape (n_nodes, {N_PARAMS}), got {self.values.shape}")

    def __len__(self) -> int:
        return len(self.values)

    @classmethod
    def identity(cls, n_nodes: int) -> "FrameParams":
        values = np.zeros((n_nodes, N_PARAMS))
        values[:, SHEAR6] = SHEAR6_IDENTITY
        return cls(values)

    @classmethod
    def from_flat(cls, flat: np.ndarray) -> "FrameParams":
        return cls(np.asarray(flat, dtype=np.float64).reshape(-1, N_PARAMS))

    @classmethod
    def from_transforms(cls, transforms: NodeTransforms) -> "FrameParams":
        values = np.empty((len(transforms), N_PARAMS))
        values[:, ROTVEC] = matrix_to_rotvec(transforms.rotations)
        values[:, SHEAR6] = shear_to6(transforms.shears)
        values[:, TRANSLATION] = transforms.translations
        values[:, ETA_LOGIT] = logit(np.clip(transforms.rigid_strength, ETA_EPS, 1.0 - ETA_EPS))
        return cls(values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @property
    def rotvecs(self) -> np.ndarray:
        return self.values[:, ROTVEC]

    @property
    def eta(self) -> np.ndarray:
        return expit(self.values[:, ETA_LOGIT])

    def to_transforms(self) -> NodeTransforms:
        return NodeTransforms(
            rotations=rotvec_to_matrix(self.values[:, ROTVEC]),
            shears=shear_from6(self.values[:, SHEAR6]),
            translations=self.values[:, TRANSLATION].copy(),
            rigid_strength=self.eta,
        )

    def to_frame_doc(self, time: float) -> FrameDoc:
        """Trajectory frame that keeps the fitted rotation vectors verbatim."""
        return FrameDoc(
            time=float(time),
            nodes=[
                NodeDoc(
                    rotvec=[float(x) for x in row[ROTVEC]],
                    shear6=[float(x) for x in row[SHEAR6]],
                    translation=[float(x) for x in row[TRANSLATION]],
                    eta=float(e),
                )
                for row, e in zip(self.values, self.eta)
            ],
        )


@dataclass(frozen=True)
class ObjectiveReport:
    value: float
    gradient: np.ndarray
    data: float
    arap: float
    nc: float
    positions: np.ndarray


@dataclass
class FitResult:
    params: FrameParams
    trace: List[TracePoint]
    iterations: int
    converged: bool
    stop_reason: str
    positions: np.ndarray

    @property
    def final(self) -> TracePoint:
        return self.trace[-1]


def vertex_rmse(positions: np.ndarray, targets: np.ndarray) -> float:
    diff = np.asarray(positions, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def _check_inputs(mesh: Mesh, graph: DeformationGraph, params: FrameParams, targets: np.ndarray) -> np.ndarray:
    graph.check_mesh(mesh)
    if len(params) != graph.n_nodes:
        raise DataError(f"{len(params)} node parameter rows for a graph with {graph.n_nodes} nodes")
    return mesh.check_field(targets, "targets")


def objective(
    mesh: Mesh,
    graph: DeformationGraph,
    params: FrameParams,
    targets: np.ndarray,
    cfg: Optional[FitConfig] = None,
) -> ObjectiveReport:
    cfg = cfg or FitConfig()
    y = _check_inputs(mesh, graph, params, targets)
    theta = params.values
    nbr, w = graph.neighbors, graph.weights
    rest = mesh.vertices
    n_vertices = mesh.n_vertices
    mode = cfg.mode
    use_lbs = mode in ("lbs", "ahs")
    use_dqs = mode in ("dqs", "ahs")
    use_arap = cfg.lambda_arap > 0.0

    # forward
    rotvec = theta[:, ROTVEC]
    rot = rotvec_to_matrix(rotvec)
    shear = shear_from6(theta[:, SHEAR6])
    trans = theta[:, TRANSLATION]
    eta = expit(theta[:, ETA_LOGIT])
    shear_eff = (1.0 - eta)[:, None, None] * shear + eta[:, None, None] * np.eye(3)
    quats = quat_from_rotvec(rotvec)
    q_nb = quats[nbr]
    signs = alignment_signs(q_nb, pivot_columns(nbr, w))
    eta_v = np.einsum("vk,vk->v", w, eta[nbr])

    if use_lbs:
        x_lbs = lbs_positions(rest, nbr, w, rot @ shear_eff, trans)
    if use_dqs:
        b0, bd = dq_blend_sums(nbr, w, quats, trans, signs)
        x_dqs = dq_blend_points(rest, b0, bd)
    if mode == "lbs":
        x = x_lbs
    elif mode == "dqs":
        x = x_dqs
    else:
        x = (1.0 - eta_v)[:, None] * x_lbs + eta_v[:, None] * x_dqs

    diff = x - y
    data = float(np.sum(diff * diff)) / n_vertices
    grad_x = 2.0 * diff / n_vertices
    arap = nc = 0.0
    grad_rv = None
    if use_arap:
        aligned = signs[..., None] * q_nb
        blend = np.einsum("vk,vkj->vj", w, quat_log(aligned))
        report = arap_energy(mesh, x, rotvec_to_matrix(blend))
        arap = report.value
        grad_x = grad_x + cfg.lambda_arap * report.gradient
        grad_rv = cfg.lambda_arap * report.rotation_gradient
    if cfg.lambda_nc > 0.0:
        report = normal_consistency(mesh, x)
        nc = report.value
        grad_x = grad_x + cfg.lambda_nc * report.gradient

    total = data + cfg.lambda_arap * arap + cfg.lambda_nc * nc
    if not np.isfinite(total):
        raise NumericalError(f"objective is not finite ({total}); parameters diverged")

    # reverse
    n_nodes = len(theta)
    g_rot = np.zeros((n_nodes, 3, 3))
    g_shear_eff = np.zeros((n_nodes, 3, 3))
    g_trans = np.zeros((n_nodes, 3))
    g_eta = np.zeros(n_nodes)
    g_quat = np.zeros((n_nodes, 4))
    flat_nbr = nbr.reshape(-1)

    if mode == "ahs":
        g_eta_v = np.sum(grad_x * (x_dqs - x_lbs), axis=1)
        np.add.at(g_eta, flat_nbr, (w * g_eta_v[:, None]).reshape(-1))
        g_lbs = (1.0 - eta_v)[:, None] * grad_x
        g_dqs = eta_v[:, None] * grad_x
    else:
        g_lbs = g_dqs = grad_x

    if use_lbs:
        wg = w[..., None] * g_lbs[:, None, :]
        g_affine = np.zeros((n_nodes, 3, 3))
        np.add.at(g_affine, flat_nbr, (wg[..., :, None] * rest[:, None, None, :]).reshape(-1, 3, 3))
        np.add.at(g_trans, flat_nbr, wg.reshape(-1, 3))
        g_rot += g_affine @ np.swapaxes(shear_eff, 1, 2)
        g_shear_eff += np.swapaxes(rot, 1, 2) @ g_affine

    if use_dqs:
        ws = w * signs
        g_b0, g_bd = _dq_point_vjp(rest, b0, bd, x_dqs, g_dqs)
        np.add.at(g_quat, flat_nbr, (ws[..., None] * g_b0[:, None, :]).reshape(-1, 4))
        g_dual = np.zeros((n_nodes, 4))
        np.add.at(g_dual, flat_nbr, (ws[..., None] * g_bd[:, None, :]).reshape(-1, 4))
        g_t, g_q = _dual_part_vjp(quats, trans, g_dual)
        g_trans += g_t
        g_quat += g_q

    if grad_rv is not None:
        g_blend = rotvec_to_matrix_vjp(blend, grad_rv)
        jac = quat_log_jacobian(aligned)
        g_aligned = np.einsum("vk,vkij,vi->vkj", w, jac, g_blend)
        np.add.at(g_quat, flat_nbr, (signs[..., None] * g_aligned).reshape(-1, 4))

    # S̄ = (1 - η) S + η I
    g_shear = (1.0 - eta)[:, None, None] * g_shear_eff
    g_eta += np.trace(g_shear_eff, axis1=1, axis2=2) - np.sum(g_shear_eff * shear, axis=(1, 2))

    gradient = np.zeros_like(theta)
    gradient[:, ROTVEC] = rotvec_to_matrix_vjp(rotvec, g_rot) + np.einsum(
        "nij,ni->nj", quat_from_rotvec_jacobian(rotvec), g_quat
    )
    for k, (i, j) in enumerate(SHEAR6_INDEX):
        gradient[:, 3 + k] = g_shear[:, i, i] if i == j else g_shear[:, i, j] + g_shear[:, j, i]
    gradient[:, TRANSLATION] = g_trans
    gradient[:, ETA_LOGIT] = g_eta * eta * (1.0 - eta)
    return ObjectiveReport(value=total, gradient=gradient, data=data, arap=arap, nc=nc, positions=x)


def _dq_point_vjp(rest, b0, bd, x, grad) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of x = P(b0, bd, v) / |b0|² w.r.t. b0 and bd."""
    n2 = np.sum(b0 * b0, axis=1, keepdims=True)
    g = grad / n2
    g_n2 = -np.sum(grad * x, axis=1, keepdims=True) / n2
    w, u = b0[:, :1], b0[:, 1:]
    dw, du = bd[:, :1], bd[:, 1:]
    gv = np.sum(g * rest, axis=1, keepdims=True)
    gu = np.sum(g * u, axis=1, keepdims=True)
    uv = np.sum(u * rest, axis=1, keepdims=True)

    g_w = 2.0 * w * gv + 2.0 * np.sum(g * np.cross(u, rest), axis=1, keepdims=True) + 2.0 * np.sum(g * du, axis=1, keepdims=True)
    g_u = (
        -2.0 * u * gv
        + 2.0 * (uv * g + gu * rest)
        + 2.0 * w * np.cross(rest, g)
        - 2.0 * dw * g
        + 2.0 * np.cross(du, g)
    )
    g_dw = -2.0 * gu
    g_du = 2.0 * w * g + 2.0 * np.cross(g, u)
    g_b0 = np.concatenate([g_w, g_u], axis=1) + 2.0 * b0 * g_n2
    return g_b0, np.concatenate([g_dw, g_du], axis=1)


def _dual_part_vjp(quats, trans, grad) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of d = ½ (0, t) ⊗ q = ½ (−t·q_v, q_w t + t × q_v) w.r.t. t and q."""
    qw, qv = quats[:, :1], quats[:, 1:]
    gw, gv = grad[:, :1], grad[:, 1:]
    g_t = 0.5 * (-gw * qv + qw * gv + np.cross(qv, gv))
    g_qw = 0.5 * np.sum(gv * trans, axis=1, keepdims=True)
    g_qv = 0.5 * (-gw * trans + np.cross(gv, trans))
    return g_t, np.concatenate([g_qw, g_qv], axis=1)


def _lbfgs_direction(grad: np.ndarray, memory: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    q = grad.copy()
    alphas = []
    for s, y in reversed(memory):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if memory:
        s, y = memory[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(memory, reversed(alphas)):
        q += (a - rho * (y @ q)) * s
    return -q


def _trace_point(it: int, rep: ObjectiveReport) -> TracePoint:
    return TracePoint(iter=it, data=rep.data, arap=rep.arap, nc=rep.nc, total=rep.value)


def fit_frame(
    mesh: Mesh,
    graph: DeformationGraph,
    targets: np.ndarray,
    cfg: Optional[FitConfig] = None,
    init: Optional[FrameParams] = None,
) -> FitResult:
    """Backtracking descent from init (identity by default).

    Trial steps are halved until f(x + a·d) ≤ f(x) + 1e-4·a·∇f·d, so the trace never
    increases. A trial point whose evaluation raises NumericalError is rejected like
    an increase.
    """
    cfg = cfg or FitConfig()
    init = init or FrameParams.identity(graph.n_nodes)
    targets = _check_inputs(mesh, graph, init, targets)

    def evaluate(flat: np.ndarray) -> ObjectiveReport:
        return objective(mesh, graph, FrameParams.from_flat(flat), targets, cfg)

    x = init.flat.copy()
    current = evaluate(x)
    grad = current.gradient.reshape(-1)
    trace = [_trace_point(0, current)]
    memory: List[Tuple[np.ndarray, np.ndarray]] = []
    gd_step = cfg.step_size
    stop = "max_iters"

    for it in range(1, cfg.max_iters + 1):
        if np.abs(grad).max() < GRADIENT_FLOOR:
            stop = "stationary"
            break
        direction = _lbfgs_direction(grad, memory) if cfg.optimizer == "lbfgs" else -grad
        slope = float(grad @ direction)
        quasi_newton = cfg.optimizer == "lbfgs" and bool(memory)
        if not slope < 0.0:
            direction, slope, quasi_newton = -grad, -float(grad @ grad), False
        step = 1.0 if quasi_newton else (2.0 * gd_step if it > 1 else cfg.step_size)

        accepted = None
        for _ in range(MAX_HALVINGS):
            trial = x + step * direction
            try:
                report = evaluate(trial)
            except NumericalError:
                report = None
            if report is not None and report.value <= current.value + ARMIJO * step * slope:
                accepted = report
                break
            step *= 0.5
        if accepted is None:
            stop = "line_search"
            break

        if not quasi_newton:
            gd_step = step
        new_grad = accepted.gradient.reshape(-1)
        s, y = trial - x, new_grad - grad
        if s @ y > 0.0:
            memory.append((s, y))
            del memory[:-LBFGS_MEMORY]
        relative = (current.value - accepted.value) / max(abs(current.value), np.finfo(float).tiny)
        x, grad, current = trial, new_grad, accepted
        trace.append(_trace_point(it, current))
        if relative < cfg.convergence_tol:
            stop = "relative_decrease"
            break

    return FitResult(
        params=FrameParams.from_flat(x),
        trace=trace,
        iterations=len(trace) - 1,
        converged=stop in ("stationary", "relative_decrease"),
        stop_reason=stop,
        positions=current.positions,
    )


def fit_sequence(
    mesh: Mesh,
    graph: DeformationGraph,
    target_frames: Sequence[np.ndarray],
    cfg: Optional[FitConfig] = None,
    on_frame: Optional[Callable[[int, FitResult], None]] = None,
) -> List[FitResult]:
    """Fit frames in order, each warm-started from the previous result."""
    if len(target_frames) == 0:
        raise DataError("fit_sequence needs at least one target frame")
    cfg = cfg or FitConfig()
    results: List[FitResult] = []
    init = FrameParams.identity(graph.n_nodes)
    for k, targets in enumerate(target_frames):
        result = fit_frame(mesh, graph, targets, cfg, init)
        results.append(result)
        logger.info(
            json.dumps(
                {
                    "event": "frame_fitted",
                    "frame": k,
                    "iterations": result.iterations,
                    "total": result.final.total,
                    "rmse": vertex_rmse(result.positions, targets),
                    "converged": result.converged,
                }
            )
        )
        init = result.params
        if on_frame is not None:
            on_frame(k, result)
    return results
