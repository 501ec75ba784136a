"""Training objectives and the flow-confidence mask.

Every loss returns a ``LossValue``: the scalar plus named gradient arrays for
whatever inputs the fit stages optimize through.  Image-space gradients are
meant to be fed to ``render_backward``; cloud-space ones chain directly.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .geometry import quat_to_rotmat, rotmat_backward
from .renderer import render, render_backward

LAMBDA_RGB = 1.0
LAMBDA_FLOW = 0.5
LAMBDA_SCALE = 0.1
LAMBDA_RIGID = 0.1


@dataclass
class LossValue:
    value: float
    grads: dict = field(default_factory=dict)
    flag: str = ""

    def __float__(self):
        return float(self.value)


def rgb_loss(rendered, target, mask=None):
    """Mean squared error over (optionally masked) pixels and channels."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise ValueError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    diff = rendered - target
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != rendered.shape[:2]:
            raise ValueError("mask shape must match the image grid")
        if not mask.any():
            return LossValue(0.0, {"rendered": np.zeros_like(rendered)}, flag="empty mask")
        diff = diff * mask[..., None]
        count = mask.sum() * rendered.shape[-1]
    else:
        count = diff.size
    value = float(np.sum(diff * diff) / count)
    return LossValue(value, {"rendered": 2.0 * diff / count})


def flow_loss(rendered_flow, target_flow, confidence_mask, flow_valid=None):
    """Masked L1 flow error: per-pixel sum over the two components, averaged
    over pixels that pass the confidence mask and carry valid rendered flow."""
    rendered_flow = np.asarray(rendered_flow, dtype=np.float64)
    target_flow = np.asarray(target_flow, dtype=np.float64)
    if rendered_flow.shape != target_flow.shape:
        raise ValueError("flow shapes differ")
    mask = np.asarray(confidence_mask, dtype=bool)
    if flow_valid is not None:
        mask = mask & np.asarray(flow_valid, dtype=bool)
    if not mask.any():
        return LossValue(0.0, {"rendered_flow": np.zeros_like(rendered_flow)},
                         flag="empty mask")
    count = mask.sum()
    diff = (rendered_flow - target_flow) * mask[..., None]
    value = float(np.sum(np.abs(diff)) / count)
    return LossValue(value, {"rendered_flow": np.sign(diff) / count})


def flow_consistency_mask(fwd_flow, bwd_flow, tau_abs=1.5, tau_rel=0.05):
    """Forward-backward check: a pixel passes iff the backward flow sampled at
    its forward-advected position cancels the forward flow.

    The backward field is sampled bilinearly with edge clamping.  The pass
    threshold is ``max(tau_abs, tau_rel * |fwd|)`` pixels.
    """
    fwd = np.asarray(fwd_flow, dtype=np.float64)
    bwd = np.asarray(bwd_flow, dtype=np.float64)
    if fwd.shape != bwd.shape:
        raise ValueError("flow shapes differ")
    h, w = fwd.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    px = xs + fwd[..., 0]
    py = ys + fwd[..., 1]
    coords = np.stack([py.ravel(), px.ravel()])
    bwd_at = np.stack(
        [map_coordinates(bwd[..., c], coords, order=1, mode="nearest") for c in (0, 1)],
        axis=-1,
    ).reshape(h, w, 2)
    err = np.linalg.norm(fwd + bwd_at, axis=-1)
    fwd_mag = np.linalg.norm(fwd, axis=-1)
    return err < np.maximum(tau_abs, tau_rel * fwd_mag)


def scale_reg_loss(scales):
    """Temporal smoothness of activated scales.

    ``scales`` is (T, N, 3); the loss is the mean over Gaussians of the
    average L1 step between consecutive frames.
    """
    scales = np.asarray(scales, dtype=np.float64)
    if scales.ndim != 3 or scales.shape[0] < 2:
        raise ValueError("need activated scales shaped (T >= 2, N, 3)")
    t, n, _ = scales.shape
    diff = scales[1:] - scales[:-1]
    norm = (t - 1) * n
    value = float(np.sum(np.abs(diff)) / norm)
    grad = np.zeros_like(scales)
    s = np.sign(diff) / norm
    grad[1:] += s
    grad[:-1] -= s
    return LossValue(value, {"scales": grad})


def build_neighbor_graph(means, k=8):
    """Directed k-nearest-neighbor edges (i -> each of i's k neighbors).

    ``k`` shrinks automatically for tiny clouds; a single-splat cloud has no
    edges.
    """
    means = np.asarray(means, dtype=np.float64)
    n = means.shape[0]
    k = min(k, n - 1)
    if k < 1:
        return np.zeros((0, 2), dtype=np.int64)
    tree = cKDTree(means)
    _, idx = tree.query(means, k=k + 1)
    idx = np.atleast_2d(idx)
    src = np.repeat(np.arange(n, dtype=np.int64), k)
    dst = idx[:, 1:].astype(np.int64).ravel()
    return np.stack([src, dst], axis=-1)


def rigidity_loss(canonical, deformed, edges):
    """Local-rigidity residual against the canonical configuration.

    For each edge (i, j) and each deformed frame, the displacement between the
    two splats should equal the canonical displacement carried by splat i's
    rotation change.  The loss is the mean residual norm over edges and
    frames.  Gradients are reported for the deformed positions and rotations,
    stacked over frames.
    """
    if not isinstance(deformed, (list, tuple)):
        deformed = [deformed]
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = len(canonical)
    t = len(deformed)
    d_means = np.zeros((t, n, 3))
    d_rots = np.zeros((t, n, 4))
    if edges.shape[0] == 0:
        return LossValue(0.0, {"means": d_means, "rotations": d_rots}, flag="no edges")

    src, dst = edges[:, 0], edges[:, 1]
    e_canon = canonical.means[src] - canonical.means[dst]
    rot1 = quat_to_rotmat(canonical.rotations)
    denom = edges.shape[0] * t
    total = 0.0
    for f, cloud in enumerate(deformed):
        rot_t = quat_to_rotmat(cloud.rotations)
        rel = np.einsum("nij,nkj->nik", rot_t, rot1)  # R_t R_1^T per splat
        carried = np.einsum("eij,ej->ei", rel[src], e_canon)
        residual = (cloud.means[src] - cloud.means[dst]) - carried
        norms = np.linalg.norm(residual, axis=-1)
        total += float(np.sum(norms))
        safe = np.where(norms > 1e-12, norms, 1.0)
        unit = residual / safe[:, None]
        unit[norms <= 1e-12] = 0.0
        np.add.at(d_means[f], src, unit / denom)
        np.add.at(d_means[f], dst, -unit / denom)
        # d residual / d rel = -unit e_canon^T, accumulated per source splat
        d_rel = -unit[:, :, None] * e_canon[:, None, :] / denom
        d_rot_mat = np.zeros((n, 3, 3))
        np.add.at(d_rot_mat, src, np.einsum("eij,ekj->eik", d_rel, rot1[src].transpose(0, 2, 1)))
        d_rots[f] = rotmat_backward(cloud.rotations, d_rot_mat)
    return LossValue(total / denom, {"means": d_means, "rotations": d_rots})


def background_loss(bg_cloud, frames, camtrack, background=(0.0, 0.0, 0.0)):
    """Photometric consistency of the background under the scaled camera track.

    Renders the background cloud through each frame's camera (translation
    scaled by that frame's beta) and averages the per-frame mean squared
    error.  The gradient handle covers the betas.
    """
    frames = np.asarray(frames, dtype=np.float64)
    t = frames.shape[0]
    if camtrack.n_frames != t:
        raise ValueError("camera track and clip disagree on frame count")
    d_betas = np.zeros(t)
    total = 0.0
    for i in range(t):
        cam = camtrack.camera(i + 1)
        out, ctx = render(cam, bg_cloud, background=background, return_ctx=True)
        term = rgb_loss(out.rgb, frames[i])
        total += term.value
        grads = render_backward(ctx, d_rgb=term.grads["rendered"] / t)
        d_betas[i] = float(np.dot(grads.d_cam_tvec, camtrack.translations[i]))
    return LossValue(total / t, {"betas": d_betas})


@dataclass
class DepthNormalization:
    t_d: float      # median of the reference-object depths
    sigma_d: float  # q90 - q10 of the reference-object depths


def compute_depth_stats(depth, ref_mask):
    """Reference-object depth statistics used for affine normalization."""
    depth = np.asarray(depth, dtype=np.float64)
    ref_mask = np.asarray(ref_mask, dtype=bool)
    vals = depth[ref_mask]
    if vals.size == 0:
        raise ValueError("reference mask selects no pixels")
    t_d = float(np.median(vals))
    sigma = float(np.quantile(vals, 0.9) - np.quantile(vals, 0.1))
    if sigma <= 0.0:
        raise ValueError("degenerate reference depth (q90 - q10 is zero)")
    return DepthNormalization(t_d=t_d, sigma_d=sigma)


def depth_normalize(depth, ref_mask=None, stats=None):
    """Shift-and-scale a depth map by its reference-object statistics."""
    depth = np.asarray(depth, dtype=np.float64)
    if stats is None:
        if ref_mask is None:
            raise ValueError("need either precomputed stats or a reference mask")
        stats = compute_depth_stats(depth, ref_mask)
    return (depth - stats.t_d) / stats.sigma_d


def depth_align_loss(rendered_depth, predicted_depth, masks, ref_mask):
    """Affine-invariant depth mismatch over the object regions.

    Both maps are normalized independently by their own reference-object
    median and decile spread, then compared with L1 over the union of the
    object masks.  Used by the composition search, which is derivative-free,
    so no gradient handles are exposed.
    """
    if isinstance(masks, (list, tuple)):
        union = np.zeros(np.asarray(rendered_depth).shape, dtype=bool)
        for m in masks:
            union |= np.asarray(m, dtype=bool)
    else:
        union = np.asarray(masks, dtype=bool)
    if not union.any():
        return LossValue(0.0, flag="empty mask")
    a = depth_normalize(rendered_depth, ref_mask=ref_mask)
    b = depth_normalize(predicted_depth, ref_mask=ref_mask)
    value = float(np.mean(np.abs(a[union] - b[union])))
    return LossValue(value)
