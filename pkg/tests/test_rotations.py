import numpy as np
import pytest

from hybridskin.rotations import (
    matrix_to_quat,
    matrix_to_rotvec,
    quat_from_rotvec,
    quat_from_rotvec_jacobian,
    quat_log,
    quat_log_jacobian,
    quat_multiply,
    quat_to_matrix,
    rotation_angle_between,
    rotvec_to_matrix,
    rotvec_to_matrix_vjp,
    skew,
    unskew,
)


def _rotvecs():
    rng = np.random.default_rng(7)
    big = rng.uniform(-1.5, 1.5, size=(6, 3))
    small = 1e-3 * rng.normal(size=(3, 3))
    return np.concatenate([big, small, np.zeros((1, 3))])


def test_matrix_quat_round_trip_is_canonical():
    r = rotvec_to_matrix(_rotvecs())
    q = matrix_to_quat(r)
    assert (q[:, 0] >= 0.0).all()
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(quat_to_matrix(q), r, atol=1e-12)
    np.testing.assert_allclose(quat_to_matrix(-q), r, atol=1e-12)


def test_quat_multiply_composes_rotations():
    r = rotvec_to_matrix(_rotvecs())
    q = matrix_to_quat(r)
    np.testing.assert_allclose(quat_to_matrix(quat_multiply(q[0], q[1])), r[0] @ r[1], atol=1e-12)


def test_skew_and_unskew_pairing():
    rng = np.random.default_rng(0)
    a, v = rng.normal(size=3), rng.normal(size=3)
    m = rng.normal(size=(3, 3))
    np.testing.assert_allclose(skew(a) @ v, np.cross(a, v), atol=1e-14)
    assert np.sum(m * skew(a)) == pytest.approx(a @ unskew(m), rel=1e-12)


def test_quat_log_inverts_quat_from_rotvec():
    r = _rotvecs()
    np.testing.assert_allclose(quat_log(quat_from_rotvec(r)), r, atol=1e-12)
    np.testing.assert_allclose(matrix_to_rotvec(rotvec_to_matrix(r)), r, atol=1e-12)


def test_quat_log_of_flipped_quaternion_goes_past_pi():
    q = quat_from_rotvec(np.array([0.5, 0.0, 0.0]))
    np.testing.assert_allclose(quat_log(-q), [0.5 - 2.0 * np.pi, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(quat_log(np.array([-1.0, 0.0, 0.0, 0.0])), np.zeros(3))


def test_rotvec_to_matrix_vjp_matches_finite_differences():
    rng = np.random.default_rng(1)
    h = 1e-6
    for r in _rotvecs():
        g = rng.normal(size=(3, 3))
        analytic = rotvec_to_matrix_vjp(r, g)
        numeric = np.zeros(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            numeric[k] = (np.sum(g * rotvec_to_matrix(r + e)) - np.sum(g * rotvec_to_matrix(r - e))) / (2 * h)
        np.testing.assert_allclose(analytic, numeric, atol=1e-8)


def test_quat_from_rotvec_jacobian_matches_finite_differences():
    h = 1e-6
    for r in _rotvecs():
        numeric = np.zeros((4, 3))
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            numeric[:, k] = (quat_from_rotvec(r + e) - quat_from_rotvec(r - e)) / (2 * h)
        np.testing.assert_allclose(quat_from_rotvec_jacobian(r), numeric, atol=1e-8)


def test_quat_log_jacobian_matches_finite_differences():
    rng = np.random.default_rng(2)
    samples = list(rng.normal(size=(5, 4)))
    samples.append(np.array([0.9, 2e-4, -1e-4, 3e-4]))
    samples.append(np.array([-0.7, 0.3, 0.5, -0.1]))
    h = 1e-7
    for q in samples:
        numeric = np.zeros((3, 4))
        for k in range(4):
            e = np.zeros(4)
            e[k] = h
            numeric[:, k] = (quat_log(q + e) - quat_log(q - e)) / (2 * h)
        np.testing.assert_allclose(quat_log_jacobian(q), numeric, atol=1e-6)


def test_rotation_angle_between_ignores_sign():
    qa = quat_from_rotvec(np.array([0.0, 0.0, 0.3]))
    qb = quat_from_rotvec(np.array([0.0, 0.0, 1.0]))
    assert rotation_angle_between(qa, qb) == pytest.approx(0.7, abs=1e-7)
    assert rotation_angle_between(qa, -qb) == pytest.approx(0.7, abs=1e-7)
