import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gs4d.geometry import (
    build_covariance,
    covariance_backward,
    quat_conjugate,
    quat_left_matrix,
    quat_multiply,
    quat_normalize,
    quat_right_matrix,
    quat_to_rotmat,
    rotate_vector,
    rotmat_backward,
)
from oracles import finite_difference, rodrigues


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def test_rotmat_matches_rodrigues():
    rng = np.random.default_rng(3)
    for _ in range(25):
        axis = rng.standard_normal(3)
        angle = rng.uniform(-np.pi, np.pi)
        q = axis_angle_quat(axis, angle)
        np.testing.assert_allclose(quat_to_rotmat(q), rodrigues(axis, angle), atol=1e-12)


def test_quarter_turn_about_z():
    q = np.array([np.sqrt(0.5), 0.0, 0.0, np.sqrt(0.5)])
    rotated = rotate_vector(q, np.array([1.0, 0.0, 0.0]))
    np.testing.assert_allclose(rotated, [0.0, 1.0, 0.0], atol=1e-12)


def test_rotmat_ignores_quaternion_scale():
    q = np.array([0.3, -0.5, 0.1, 0.8])
    np.testing.assert_allclose(quat_to_rotmat(q), quat_to_rotmat(2.5 * q), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-4.0, 4.0), min_size=4, max_size=4))
def test_rotmat_is_orthonormal(vals):
    q = np.asarray(vals)
    if np.linalg.norm(q) < 1e-3:
        return
    r = quat_to_rotmat(q)
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-10)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-10)


def test_quat_multiply_composes_rotations():
    rng = np.random.default_rng(11)
    p = quat_normalize(rng.standard_normal(4))
    q = quat_normalize(rng.standard_normal(4))
    lhs = quat_to_rotmat(quat_multiply(p, q))
    rhs = quat_to_rotmat(p) @ quat_to_rotmat(q)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_quat_multiply_matrix_forms():
    rng = np.random.default_rng(12)
    p = rng.standard_normal(4)
    q = rng.standard_normal(4)
    np.testing.assert_allclose(quat_left_matrix(p) @ q, quat_multiply(p, q), atol=1e-13)
    np.testing.assert_allclose(quat_right_matrix(q) @ p, quat_multiply(p, q), atol=1e-13)


def test_conjugate_inverts_unit_quaternion():
    q = quat_normalize(np.array([0.4, 0.2, -0.7, 0.5]))
    ident = quat_multiply(q, quat_conjugate(q))
    np.testing.assert_allclose(ident, [1.0, 0.0, 0.0, 0.0], atol=1e-12)


def test_covariance_axis_aligned():
    q = np.array([1.0, 0.0, 0.0, 0.0])
    ls = np.log(np.array([0.5, 1.0, 2.0]))
    sigma = build_covariance(q, ls)
    np.testing.assert_allclose(sigma, np.diag([0.25, 1.0, 4.0]), atol=1e-12)


def test_covariance_rotates_with_quaternion():
    q = axis_angle_quat([0.0, 0.0, 1.0], np.pi / 2.0)
    ls = np.log(np.array([2.0, 1.0, 1.0]))
    sigma = build_covariance(q, ls)
    # the long axis now lies along y
    np.testing.assert_allclose(sigma, np.diag([1.0, 4.0, 1.0]), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.floats(-3.0, 3.0), min_size=4, max_size=4),
    st.lists(st.floats(-2.0, 1.0), min_size=3, max_size=3),
)
def test_covariance_symmetric_psd(qv, lsv):
    q = np.asarray(qv)
    if np.linalg.norm(q) < 1e-3:
        return
    sigma = build_covariance(q, np.asarray(lsv))
    np.testing.assert_allclose(sigma, sigma.T, atol=1e-12)
    assert np.min(np.linalg.eigvalsh(sigma)) >= -1e-12


def test_rotmat_backward_finite_difference():
    rng = np.random.default_rng(7)
    for _ in range(6):
        q = rng.standard_normal(4)
        upstream = rng.standard_normal((3, 3))
        grad = rotmat_backward(q, upstream)
        ref = finite_difference(lambda v: np.sum(quat_to_rotmat(v) * upstream), q)
        np.testing.assert_allclose(grad, ref, rtol=1e-6, atol=1e-8)


def test_covariance_backward_finite_difference():
    rng = np.random.default_rng(8)
    for _ in range(6):
        q = rng.standard_normal(4)
        ls = rng.uniform(-2.0, 0.5, 3)
        upstream = rng.standard_normal((3, 3))
        d_q, d_ls = covariance_backward(q, ls, upstream)
        ref_q = finite_difference(lambda v: np.sum(build_covariance(v, ls) * upstream), q)
        ref_ls = finite_difference(lambda v: np.sum(build_covariance(q, v) * upstream), ls)
        np.testing.assert_allclose(d_q, ref_q, rtol=1e-5, atol=1e-8)
        np.testing.assert_allclose(d_ls, ref_ls, rtol=1e-5, atol=1e-8)


def test_covariance_backward_batched():
    rng = np.random.default_rng(9)
    q = rng.standard_normal((5, 4))
    ls = rng.uniform(-2.0, 0.5, (5, 3))
    upstream = rng.standard_normal((5, 3, 3))
    d_q, d_ls = covariance_backward(q, ls, upstream)
    for i in range(5):
        si_q, si_ls = covariance_backward(q[i], ls[i], upstream[i])
        np.testing.assert_allclose(d_q[i], si_q, atol=1e-13)
        np.testing.assert_allclose(d_ls[i], si_ls, atol=1e-13)
