"""Quantitative evaluation: projected-track end point error and image quality.

Track readout follows the compositing weights: a query pixel at frame 1 is
attached to every splat whose footprint covers it, weighted by that splat's
frame-1 contribution ``alpha * T`` at the pixel, and its track is the
weight-averaged projected center of those splats at every frame.  EPE pools
all (track, frame) points; the visible/occluded split uses the ground-truth
visibility flags, since annotations carry occlusion, predictions do not.

PSNR and SSIM stand in for learned perceptual scores at this scale: PSNR is
``10 log10(1 / MSE)`` capped at 99 dB, SSIM uses the standard 11x11 Gaussian
window (sigma 1.5) and constants, averaged over the interior where the
window fits.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import correlate1d

from .camera import project_point
from .renderer import composite_weights

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

PSNR_CAP = 99.0
PSNR_MSE_FLOOR = 1e-10


@dataclass
class TrackSet:
    """Persistent 2D tracks: every id present at every frame."""

    ids: np.ndarray       # (K,)
    uv: np.ndarray        # (K, T, 2) pixel positions
    visible: np.ndarray   # (K, T)
    unassigned: Optional[np.ndarray] = None  # (K,) queries no footprint covered

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        k = self.ids.size
        self.uv = np.asarray(self.uv, dtype=np.float64).reshape(k, -1, 2)
        self.visible = np.asarray(self.visible, dtype=bool).reshape(k, self.uv.shape[1])
        if len(np.unique(self.ids)) != k:
            raise ValueError("track ids must be unique")
        if not np.all(np.isfinite(self.uv)):
            raise ValueError("track coordinates must be finite")
        if self.unassigned is not None:
            self.unassigned = np.asarray(self.unassigned, dtype=bool).reshape(k)

    @property
    def n_frames(self):
        return self.uv.shape[1]


@dataclass
class EpeReport:
    mean_epe: float
    median_epe: float
    mean_epe_visible: float
    mean_epe_occluded: float
    n_points: int
    n_visible: int
    n_occluded: int

    def as_dict(self):
        return {
            "mean_epe": self.mean_epe,
            "median_epe": self.median_epe,
            "mean_epe_visible": self.mean_epe_visible,
            "mean_epe_occluded": self.mean_epe_occluded,
            "n_points": self.n_points,
            "n_visible": self.n_visible,
            "n_occluded": self.n_occluded,
        }


def project_gaussian_tracks(frame_clouds, cameras, queries, ids=None):
    """Track query pixels through a fitted scene's per-frame world clouds.

    ``frame_clouds`` holds the same splats at every frame (matching ids in
    matching order); ``cameras`` is one camera per frame or a camera track;
    ``queries`` is (K, 2) pixel positions at frame 1.  Queries that no splat
    footprint covers keep their query position at every frame and are marked
    in the result's ``unassigned`` flags.
    """
    if hasattr(cameras, "cameras"):
        cameras = cameras.cameras()
    cameras = list(cameras)
    frame_clouds = list(frame_clouds)
    if len(frame_clouds) != len(cameras) or not frame_clouds:
        raise ValueError("need one cloud and one camera per frame")
    base_ids = frame_clouds[0].ids
    for cloud in frame_clouds[1:]:
        if not np.array_equal(cloud.ids, base_ids):
            raise ValueError("frame clouds must hold the same splats in the same order")
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    k, t_count = queries.shape[0], len(cameras)

    weights, index = composite_weights(cameras[0], frame_clouds[0], queries)
    total = weights.sum(axis=0) if weights.size else np.zeros(k)
    unassigned = total <= 0.0
    norm = weights / np.where(unassigned, 1.0, total)[None, :] if weights.size else weights

    uv = np.tile(queries[:, None, :], (1, t_count, 1))
    if index.size:
        for t, camera in enumerate(cameras):
            centers, _, valid = project_point(camera, frame_clouds[t].means[index])
            touched = norm.any(axis=1)
            if np.any(touched & ~valid):
                raise ValueError(f"an assigned splat left the frustum at frame {t + 1}")
            tracked = norm.T @ np.where(valid[:, None], centers, 0.0)
            uv[~unassigned, t] = tracked[~unassigned]
    if ids is None:
        ids = np.arange(k, dtype=np.int64)
    return TrackSet(ids=ids, uv=uv, visible=np.ones((k, t_count), dtype=bool),
                    unassigned=unassigned)


def compute_epe(pred, gt):
    """Pooled end point error between matching track sets.

    Tracks are matched by id, so ordering does not matter.  The
    visible/occluded split follows the ground-truth visibility flags.
    """
    if pred.n_frames != gt.n_frames:
        raise ValueError(
            f"frame counts differ: prediction {pred.n_frames}, ground truth {gt.n_frames}"
        )
    order_p = np.argsort(pred.ids)
    order_g = np.argsort(gt.ids)
    if not np.array_equal(pred.ids[order_p], gt.ids[order_g]):
        raise ValueError("track id sets differ")
    err = np.linalg.norm(pred.uv[order_p] - gt.uv[order_g], axis=-1)
    vis = gt.visible[order_g]

    def safe_mean(values):
        return float(values.mean()) if values.size else 0.0

    return EpeReport(
        mean_epe=safe_mean(err),
        median_epe=float(np.median(err)) if err.size else 0.0,
        mean_epe_visible=safe_mean(err[vis]),
        mean_epe_occluded=safe_mean(err[~vis]),
        n_points=int(err.size),
        n_visible=int(vis.sum()),
        n_occluded=int((~vis).sum()),
    )


def psnr(img_a, img_b):
    """Peak signal-to-noise ratio in dB for images in [0, 1], capped at 99."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def _ssim_blur(img, kernel):
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def ssim(img_a, img_b):
    """Structural similarity in [-1, 1], averaged over channels and the
    interior region where the 11x11 window fits entirely."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels on each side")
    offsets = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    kernel = np.exp(-0.5 * (offsets / SSIM_SIGMA) ** 2)
    kernel /= kernel.sum()
    margin = SSIM_WINDOW // 2
    values = []
    for c in range(a.shape[2]):
        xa, xb = a[:, :, c], b[:, :, c]
        mu_a = _ssim_blur(xa, kernel)
        mu_b = _ssim_blur(xb, kernel)
        var_a = _ssim_blur(xa * xa, kernel) - mu_a * mu_a
        var_b = _ssim_blur(xb * xb, kernel) - mu_b * mu_b
        cov = _ssim_blur(xa * xb, kernel) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        values.append((num / den)[margin:h - margin, margin:w - margin])
    return float(np.mean(values))
