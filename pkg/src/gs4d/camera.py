"""Pinhole cameras and world-to-pixel projection.

A camera stores the world-to-camera rigid transform as ``(rot, tvec)`` so that
``p_cam = rot @ p_world + tvec``.  Pixel ``(ix, iy)`` of the image samples the
continuous point ``(ix + 0.5, iy + 0.5)``; projected coordinates are continuous
and share that convention.  The camera looks down +z in its own frame.
"""

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rot: np.ndarray  # (3, 3) world-to-camera rotation
    tvec: np.ndarray  # (3,) world-to-camera translation
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        self.rot = np.asarray(self.rot, dtype=np.float64).reshape(3, 3)
        self.tvec = np.asarray(self.tvec, dtype=np.float64).reshape(3)

    @property
    def center(self):
        """Camera center in world coordinates."""
        return -self.rot.T @ self.tvec

    def to_camera(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rot.T + self.tvec

    def with_pose(self, rot, tvec):
        return replace(self, rot=np.asarray(rot, dtype=np.float64), tvec=np.asarray(tvec, dtype=np.float64))

    def pixel_grid(self):
        """Continuous sample coordinates of every pixel, shape (H, W, 2)."""
        xs = np.arange(self.width, dtype=np.float64) + 0.5
        ys = np.arange(self.height, dtype=np.float64) + 0.5
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def unproject(self, uv, depth):
        """World point of pixel coordinate ``uv`` at camera depth ``depth``."""
        uv = np.asarray(uv, dtype=np.float64)
        x = (uv[..., 0] - self.cx) / self.fx * depth
        y = (uv[..., 1] - self.cy) / self.fy * depth
        p_cam = np.stack([x, y, np.broadcast_to(depth, np.shape(x))], axis=-1)
        return (p_cam - self.tvec) @ self.rot


def project_point(camera, points):
    """Project world points to pixel coordinates.

    Returns ``(uv, depth, valid)`` where ``valid`` is False for points at or
    behind the near plane (their uv entries are NaN).
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    p_cam = camera.to_camera(np.atleast_2d(pts))
    z = p_cam[:, 2]
    valid = z > camera.near
    with np.errstate(divide="ignore", invalid="ignore"):
        u = camera.fx * p_cam[:, 0] / z + camera.cx
        v = camera.fy * p_cam[:, 1] / z + camera.cy
    uv = np.stack([u, v], axis=-1)
    uv[~valid] = np.nan
    if single:
        return uv[0], z[0], bool(valid[0])
    return uv, z, valid


def projection_jacobian(camera, p_cam):
    """Jacobian of the pixel projection with respect to camera-space position.

    ``p_cam`` has shape ``(N, 3)``; the result is ``(N, 2, 3)``.
    """
    p = np.asarray(p_cam, dtype=np.float64)
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    n = p.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * x / (z * z)
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * y / (z * z)
    return jac


def look_at(eye, target, up=(0.0, -1.0, 0.0), **intrinsics):
    """Camera at ``eye`` looking toward ``target``.

    The camera frame is x-right, y-down, z-forward.  The world is y-down as
    well, so the default ``up`` of ``(0, -1, 0)`` makes a camera on the -z
    axis looking at the origin have the identity rotation.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    norm = np.linalg.norm(fwd)
    if norm == 0.0:
        raise ValueError("look_at eye and target coincide")
    fwd = fwd / norm
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("up direction is parallel to the view direction")
    right = right / rn
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=0)
    tvec = -rot @ eye
    return PinholeCamera(rot=rot, tvec=tvec, **intrinsics)


def orbit_camera(center, radius, azimuth_deg, elevation_deg, **intrinsics):
    """Camera on a sphere around ``center`` looking at it.

    Azimuth 0, elevation 0 places the camera on the -z side looking +z with
    the identity rotation; positive azimuth moves it toward +x, positive
    elevation lifts it toward -y (up, in the y-down world).
    """
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    center = np.asarray(center, dtype=np.float64)
    offset = np.array(
        [
            math.sin(az) * math.cos(el),
            -math.sin(el),
            -math.cos(az) * math.cos(el),
        ]
    )
    eye = center + radius * offset
    return look_at(eye, center, **intrinsics)


def crop_camera(camera, cx_px, cy_px, window, out_size):
    """Camera equivalent to cropping a square ``window`` around ``(cx_px, cy_px)``
    and resizing it to ``out_size`` pixels.

    Pose is unchanged; only intrinsics move.  ``window`` is the side length of
    the crop in source pixels (may be fractional).
    """
    scale = out_size / window
    left = cx_px - 0.5 * window
    top = cy_px - 0.5 * window
    return PinholeCamera(
        fx=camera.fx * scale,
        fy=camera.fy * scale,
        cx=(camera.cx - left) * scale,
        cy=(camera.cy - top) * scale,
        width=out_size,
        height=out_size,
        rot=camera.rot.copy(),
        tvec=camera.tvec.copy(),
        near=camera.near,
        far=camera.far,
    )
