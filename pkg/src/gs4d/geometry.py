"""Quaternion and covariance math shared by the renderer and the motion model.

Quaternions are stored ``(w, x, y, z)`` with Hamilton products.  Rotations act
on column vectors, ``x' = R x``.  Functions accept a single quaternion ``(4,)``
or a batch ``(N, 4)`` and broadcast accordingly; gradients are exact analytic
expressions checked against finite differences in the tests.
"""

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValueError("cannot normalize a zero quaternion")
    return q / norm


def quat_multiply(p, q):
    """Hamilton product ``p * q`` (apply q's rotation first, then p's)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_left_matrix(q):
    """Matrix L(q) with ``quat_multiply(q, p) == L(q) @ p`` for column p."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, -z, y],
            [y, z, w, -x],
            [z, -y, x, w],
        ]
    )


def quat_right_matrix(q):
    """Matrix R(q) with ``quat_multiply(p, q) == R(q) @ p`` for column p."""
    w, x, y, z = q
    return np.array(
        [
            [w, -x, -y, -z],
            [x, w, z, -y],
            [y, -z, w, x],
            [z, y, -x, w],
        ]
    )


def quat_to_rotmat(q):
    """Rotation matrices from (possibly unnormalized) quaternions.

    Input is normalized first, so scaling a quaternion does not change the
    rotation.  Batched input ``(N, 4)`` yields ``(N, 3, 3)``.
    """
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    rows = [
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ]
    out = np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)
    return out


def rotmat_backward(q, d_rot):
    """Gradient of a loss through ``quat_to_rotmat`` back to the raw quaternion.

    ``d_rot`` has shape ``(..., 3, 3)``; the result matches the shape of ``q``.
    Includes the Jacobian of the internal normalization.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qh = q / norm
    w, x, y, z = qh[..., 0], qh[..., 1], qh[..., 2], qh[..., 3]
    g = np.asarray(d_rot, dtype=np.float64)

    def at(i, j):
        return g[..., i, j]

    # dR/dw, dR/dx, dR/dy, dR/dz contracted with the upstream gradient.
    dw = (
        2.0 * (-z * at(0, 1) + y * at(0, 2) + z * at(1, 0) - x * at(1, 2) - y * at(2, 0) + x * at(2, 1))
    )
    dx = (
        2.0
        * (
            y * at(0, 1)
            + z * at(0, 2)
            + y * at(1, 0)
            - 2.0 * x * at(1, 1)
            - w * at(1, 2)
            + z * at(2, 0)
            + w * at(2, 1)
            - 2.0 * x * at(2, 2)
        )
    )
    dy = (
        2.0
        * (
            -2.0 * y * at(0, 0)
            + x * at(0, 1)
            + w * at(0, 2)
            + x * at(1, 0)
            + z * at(1, 2)
            - w * at(2, 0)
            + z * at(2, 1)
            - 2.0 * y * at(2, 2)
        )
    )
    dz = (
        2.0
        * (
            -2.0 * z * at(0, 0)
            - w * at(0, 1)
            + x * at(0, 2)
            + w * at(1, 0)
            - 2.0 * z * at(1, 1)
            + y * at(1, 2)
            + x * at(2, 0)
            + y * at(2, 1)
        )
    )
    d_qh = np.stack([dw, dx, dy, dz], axis=-1)
    # Through the normalization: d q = (I - qh qh^T) / |q| @ d qh.
    dot = np.sum(d_qh * qh, axis=-1, keepdims=True)
    return (d_qh - qh * dot) / norm


def build_covariance(quat, log_scale):
    """World-space covariance ``R diag(exp(ls))^2 R^T``; symmetric PSD by construction."""
    rot = quat_to_rotmat(quat)
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    m = rot * s[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def covariance_backward(quat, log_scale, d_sigma):
    """Gradients of a loss through ``build_covariance``.

    ``d_sigma`` is the upstream gradient ``(..., 3, 3)``.  Returns
    ``(d_quat, d_log_scale)`` for the raw (unnormalized) quaternion and the
    log-scales.
    """
    rot = quat_to_rotmat(quat)
    s = np.exp(np.asarray(log_scale, dtype=np.float64))
    m = rot * s[..., None, :]
    d_sigma = np.asarray(d_sigma, dtype=np.float64)
    sym = d_sigma + np.swapaxes(d_sigma, -1, -2)
    d_m = sym @ m
    d_rot = d_m * s[..., None, :]
    d_s = np.einsum("...ij,...ij->...j", rot, d_m)
    d_log_scale = d_s * s
    d_quat = rotmat_backward(quat, d_rot)
    return d_quat, d_log_scale


def rotate_vector(q, v):
    """Rotate vectors by quaternions without building matrices."""
    return np.einsum("...ij,...j->...i", quat_to_rotmat(q), np.asarray(v, dtype=np.float64))
