"""Real spherical harmonics used for view-dependent Gaussian color.

Colors are stored as SH coefficients per channel; the decoded color is
``0.5 + sum_k basis_k(dir) * coeff_k`` clipped to [0, 1], with ``dir`` the unit
vector from the camera center to the Gaussian.  Degree 0..3 supported
(1, 4, 9 or 16 coefficients).
"""

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)

_DEGREE_SIZES = {0: 1, 1: 4, 2: 9, 3: 16}


def degree_for_coeffs(n_coeffs):
    for deg, n in _DEGREE_SIZES.items():
        if n == n_coeffs:
            return deg
    raise ValueError(f"unsupported SH coefficient count {n_coeffs}")


def coeffs_for_degree(degree):
    try:
        return _DEGREE_SIZES[degree]
    except KeyError:
        raise ValueError(f"unsupported SH degree {degree}")


def sh_basis(dirs, degree):
    """Basis values ``(N, K)`` for unit directions ``(N, 3)``."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    n = coeffs_for_degree(degree)
    out = np.empty(dirs.shape[:-1] + (n,))
    out[..., 0] = C0
    if degree >= 1:
        out[..., 1] = -C1 * y
        out[..., 2] = C1 * z
        out[..., 3] = -C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out[..., 4] = C2[0] * x * y
        out[..., 5] = C2[1] * y * z
        out[..., 6] = C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = C2[3] * x * z
        out[..., 8] = C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = C3[1] * x * y * z
        out[..., 11] = C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = C3[5] * z * (xx - yy)
        out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs, degree):
    """Jacobian of the basis w.r.t. the direction, shape ``(N, K, 3)``."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    n = coeffs_for_degree(degree)
    g = np.zeros(dirs.shape[:-1] + (n, 3))
    if degree >= 1:
        g[..., 1, 1] = -C1
        g[..., 2, 2] = C1
        g[..., 3, 0] = -C1
    if degree >= 2:
        g[..., 4, 0] = C2[0] * y
        g[..., 4, 1] = C2[0] * x
        g[..., 5, 1] = C2[1] * z
        g[..., 5, 2] = C2[1] * y
        g[..., 6, 0] = C2[2] * (-2.0 * x)
        g[..., 6, 1] = C2[2] * (-2.0 * y)
        g[..., 6, 2] = C2[2] * (4.0 * z)
        g[..., 7, 0] = C2[3] * z
        g[..., 7, 2] = C2[3] * x
        g[..., 8, 0] = C2[4] * (2.0 * x)
        g[..., 8, 1] = C2[4] * (-2.0 * y)
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        g[..., 9, 0] = C3[0] * 6.0 * x * y
        g[..., 9, 1] = C3[0] * (3.0 * xx - 3.0 * yy)
        g[..., 10, 0] = C3[1] * y * z
        g[..., 10, 1] = C3[1] * x * z
        g[..., 10, 2] = C3[1] * x * y
        g[..., 11, 0] = C3[2] * (-2.0 * x * y)
        g[..., 11, 1] = C3[2] * (4.0 * zz - xx - 3.0 * yy)
        g[..., 11, 2] = C3[2] * (8.0 * y * z)
        g[..., 12, 0] = C3[3] * (-6.0 * x * z)
        g[..., 12, 1] = C3[3] * (-6.0 * y * z)
        g[..., 12, 2] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
        g[..., 13, 0] = C3[4] * (4.0 * zz - 3.0 * xx - yy)
        g[..., 13, 1] = C3[4] * (-2.0 * x * y)
        g[..., 13, 2] = C3[4] * (8.0 * x * z)
        g[..., 14, 0] = C3[5] * (2.0 * x * z)
        g[..., 14, 1] = C3[5] * (-2.0 * y * z)
        g[..., 14, 2] = C3[5] * (xx - yy)
        g[..., 15, 0] = C3[6] * (3.0 * xx - 3.0 * yy)
        g[..., 15, 1] = C3[6] * (-6.0 * x * y)
    return g


def evaluate_sh(coeffs, dirs):
    """Decode clipped RGB from SH coefficients.

    ``coeffs`` has shape ``(N, K, 3)`` (K one of 1, 4, 9, 16) and ``dirs``
    ``(N, 3)`` unit view directions.  Returns colors in [0, 1], shape (N, 3).
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    degree = degree_for_coeffs(coeffs.shape[-2])
    basis = sh_basis(dirs, degree)
    raw = 0.5 + np.einsum("...k,...kc->...c", basis, coeffs)
    return np.clip(raw, 0.0, 1.0)


def evaluate_sh_backward(coeffs, dirs, d_color):
    """Gradients of ``evaluate_sh`` w.r.t. coefficients and direction.

    The clip passes gradient only where the pre-clip value lies strictly
    inside (0, 1).  Returns ``(d_coeffs, d_dirs)``.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    degree = degree_for_coeffs(coeffs.shape[-2])
    basis = sh_basis(dirs, degree)
    raw = 0.5 + np.einsum("...k,...kc->...c", basis, coeffs)
    live = ((raw > 0.0) & (raw < 1.0)).astype(np.float64)
    d_raw = np.asarray(d_color, dtype=np.float64) * live
    d_coeffs = basis[..., :, None] * d_raw[..., None, :]
    grad_basis = sh_basis_grad(dirs, degree)
    # d dir_a = sum_{k,c} d_raw_c * coeff_{k,c} * d basis_k / d dir_a
    d_dirs = np.einsum("...kc,...c,...ka->...a", coeffs, d_raw, grad_basis)
    return d_coeffs, d_dirs
