"""Rotation conversions shared by skinning, Gaussian updates and fitting.

Quaternions are stored scalar-first (w, x, y, z). Conversions to and from matrices
go through scipy's Rotation; the rotation-vector maps that the fitter differentiates
are written out here together with their Jacobians so forward and backward passes
use the same closed forms.
"""
import numpy as np
from scipy.spatial.transform import Rotation


# below this angle (radians) the trigonometric ratios switch to Taylor series
_SMALL_ANGLE = 1e-2
# below this |u| / w the quaternion log switches to its series
_SMALL_LOG = 1e-3


def skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def unskew(m: np.ndarray) -> np.ndarray:
    """Twice the axial vector of the skew part: <M, [a]x> = a . unskew(M)."""
    return np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]], axis=-1
    )


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.concatenate([q[..., :1], -q[..., 1:]], axis=-1)


def matrix_to_quat(r: np.ndarray) -> np.ndarray:
    """Canonical unit quaternion (w >= 0) of each rotation matrix."""
    r = np.asarray(r, dtype=np.float64)
    flat = r.reshape(-1, 3, 3)
    if len(flat) == 0:
        return np.zeros(r.shape[:-2] + (4,))
    xyzw = Rotation.from_matrix(flat).as_quat(canonical=True)
    return np.roll(xyzw, 1, axis=-1).reshape(r.shape[:-2] + (4,))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    flat = q.reshape(-1, 4)
    if len(flat) == 0:
        return np.zeros(q.shape[:-1] + (3, 3))
    return Rotation.from_quat(np.roll(flat, -1, axis=-1)).as_matrix().reshape(q.shape[:-1] + (3, 3))


def rotvec_to_matrix(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    flat = r.reshape(-1, 3)
    if len(flat) == 0:
        return np.zeros(r.shape[:-1] + (3, 3))
    return Rotation.from_rotvec(flat).as_matrix().reshape(r.shape[:-1] + (3, 3))


def matrix_to_rotvec(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    if len(flat) == 0:
        return np.zeros(m.shape[:-2] + (3,))
    return Rotation.from_matrix(flat).as_rotvec().reshape(m.shape[:-2] + (3,))


def rotvec_to_matrix_vjp(r: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. exp([r]x) back to r (Rodrigues derivative)."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    s, c = np.sin(th), np.cos(th)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0, s / th)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0, (1.0 - c) / th**2)
    # (dA/dtheta) / theta and (dB/dtheta) / theta
    da = np.where(small, -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0, (th * c - s) / th**3)
    db = np.where(small, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0, (th * s - 2.0 + 2.0 * c) / th**4)
    k = skew(r)
    g_k = np.sum(grad * k, axis=(-2, -1))
    g_k2 = np.sum(grad * (k @ k), axis=(-2, -1))
    return (
        (da * g_k + db * g_k2)[..., None] * r
        + a[..., None] * unskew(grad)
        - b[..., None] * unskew(grad @ k + k @ grad)
    )


def quat_from_rotvec(r: np.ndarray) -> np.ndarray:
    """(cos(θ/2), sin(θ/2) r/θ) without canonicalizing the sign."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    s = np.where(small, 0.5 - t2 / 48.0 + t2 * t2 / 3840.0, np.sin(th / 2.0) / th)
    return np.concatenate([np.cos(theta / 2.0)[..., None], s[..., None] * r], axis=-1)


def quat_from_rotvec_jacobian(r: np.ndarray) -> np.ndarray:
    """d quat_from_rotvec / d r, shape (..., 4, 3)."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    t2 = theta * theta
    small = theta < _SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    s = np.where(small, 0.5 - t2 / 48.0 + t2 * t2 / 3840.0, np.sin(th / 2.0) / th)
    ds = np.where(
        small,
        -1.0 / 24.0 + t2 / 960.0 - t2 * t2 / 107520.0,
        (0.5 * np.cos(th / 2.0) * th - np.sin(th / 2.0)) / th**3,
    )
    jac = np.zeros(r.shape[:-1] + (4, 3))
    jac[..., 0, :] = -0.5 * s[..., None] * r
    jac[..., 1:, :] = s[..., None, None] * np.eye(3) + ds[..., None, None] * r[..., :, None] * r[..., None, :]
    return jac


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector 2·atan2(|u|, w)·u/|u| of a (not necessarily canonical) quaternion.

    A quaternion with w < 0 maps to an angle in (π, 2π), which is what keeps
    hemisphere-aligned blends continuous.
    """
    q = np.asarray(q, dtype=np.float64)
    w, u = q[..., 0], q[..., 1:]
    m = np.linalg.norm(u, axis=-1)
    series = (w > 0.0) & (m < _SMALL_LOG * np.abs(w))
    ws = np.where(series, w, 1.0)
    ms = np.where(series | (m == 0.0), 1.0, m)
    phi = np.where(
        series,
        2.0 / ws - 2.0 * m**2 / (3.0 * ws**3) + 2.0 * m**4 / (5.0 * ws**5),
        2.0 * np.arctan2(m, w) / ms,
    )
    return phi[..., None] * u


def quat_log_jacobian(q: np.ndarray) -> np.ndarray:
    """d quat_log / d q, shape (..., 3, 4)."""
    q = np.asarray(q, dtype=np.float64)
    w, u = q[..., 0], q[..., 1:]
    m = np.linalg.norm(u, axis=-1)
    series = (w > 0.0) & (m < _SMALL_LOG * np.abs(w))
    ws = np.where(series, w, 1.0)
    ms = np.where(series | (m == 0.0), 1.0, m)
    phi = np.where(
        series,
        2.0 / ws - 2.0 * m**2 / (3.0 * ws**3) + 2.0 * m**4 / (5.0 * ws**5),
        2.0 * np.arctan2(m, w) / ms,
    )
    # (d phi / d m) / m
    g = np.where(
        series,
        -4.0 / (3.0 * ws**3) + 8.0 * m**2 / (5.0 * ws**5),
        2.0 * (w * ms / (ms**2 + w**2) - np.arctan2(m, w)) / ms**3,
    )
    jac = np.zeros(q.shape[:-1] + (3, 4))
    jac[..., :, 0] = (-2.0 / (m**2 + w**2))[..., None] * u
    jac[..., :, 1:] = phi[..., None, None] * np.eye(3) + g[..., None, None] * u[..., :, None] * u[..., None, :]
    return jac


def rotation_angle_between(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    dot = np.abs(np.sum(qa * qb, axis=-1))
    return 2.0 * np.arccos(np.clip(dot, 0.0, 1.0))
